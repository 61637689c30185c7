//! Per-state jump kernels and their epsilon-indexed pre-limit family.
//!
//! In switch state `x` the big-jump intensity kernel `Gamma(u, dv; x)` is a
//! finite mixture of components. Each component has a jump-size law from a
//! small catalogue (point mass, Gaussian, uniform; coordinate-wise products
//! when `d > 1`) and a position-dependent rate
//!
//! ```text
//! lambda(u) = lambda0 * (1 + kappa * min(|u|, ucap))
//! ```
//!
//! Alongside the big jumps each state carries a small-jump drift: rate
//! `rho(x)` and displacement `d(u; x)`, so that
//!
//! ```text
//! b(u; x) = rho(x) d(u; x) + int v Gamma(u, dv; x)
//! c(u; x) = int v v^T Gamma(u, dv; x)
//! ```
//!
//! # Pre-limit family
//!
//! For `eps in (0, 1]` the pre-limit kernel is
//!
//! ```text
//! Gamma_eps(u, dv; x) = eps * Gamma(u, dv; x) + rho(x) * delta_{eps d(u; x)}(dv)
//! ```
//!
//! and the generator carries a `1/eps` prefactor. At the accelerated clock
//! big jumps therefore fire at rate `Gamma(u, R^d; x)` and small jumps of size
//! `eps d` at rate `rho / eps`. The normalised moments are explicit:
//!
//! ```text
//! eps^-1 int v Gamma_eps        = b                      (theta_b = 0)
//! eps^-1 int v v^T Gamma_eps    = c + eps rho d d^T      (theta_c = eps rho d d^T)
//! eps^-1 int g(v) Gamma_eps     = Gamma_g + rho g(eps d) / eps
//! ```
//!
//! The last correction vanishes as `eps -> 0` whenever `g(v) = O(|v|^2)` at
//! the origin, so the mean, second-moment and kernel approximation
//! conditions hold with the error terms above.

use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::probe::{norm, GProbe, TestFn};
use crate::quadrature::integrate;

/// Gaussian components are integrated over `mean +- GAUSS_SPAN * sd`.
const GAUSS_SPAN: f64 = 12.0;
/// Absolute tolerance of `kernel_g_moment`.
pub const G_MOMENT_TOL: f64 = 1e-8;
const UNIT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum JumpFamily {
    Point { value: Vec<f64> },
    Gauss { mean: Vec<f64>, sd: Vec<f64> },
    Uniform { low: Vec<f64>, high: Vec<f64> },
}

impl JumpFamily {
    pub fn dim(&self) -> usize {
        match self {
            JumpFamily::Point { value } => value.len(),
            JumpFamily::Gauss { mean, .. } => mean.len(),
            JumpFamily::Uniform { low, .. } => low.len(),
        }
    }

    fn validate(&self, at: &str) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            JumpFamily::Point { value } => {
                if !finite(value) {
                    return Err(Error::Invalid(format!("{at}: point value must be finite")));
                }
            }
            JumpFamily::Gauss { mean, sd } => {
                if mean.len() != sd.len() {
                    return Err(Error::Invalid(format!("{at}: mean and sd lengths differ")));
                }
                if !finite(mean) || sd.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                    return Err(Error::Invalid(format!("{at}: gaussian needs finite mean and sd > 0")));
                }
            }
            JumpFamily::Uniform { low, high } => {
                if low.len() != high.len() {
                    return Err(Error::Invalid(format!("{at}: low and high lengths differ")));
                }
                if !finite(low) || !finite(high) || low.iter().zip(high).any(|(a, b)| !(a < b)) {
                    return Err(Error::Invalid(format!("{at}: uniform needs finite low < high")));
                }
            }
        }
        Ok(())
    }

    /// Mean of the normalised jump law.
    pub fn mean(&self) -> Vec<f64> {
        match self {
            JumpFamily::Point { value } => value.clone(),
            JumpFamily::Gauss { mean, .. } => mean.clone(),
            JumpFamily::Uniform { low, high } => low.iter().zip(high).map(|(a, b)| 0.5 * (a + b)).collect(),
        }
    }

    /// `E[v v^T]` of the normalised law, row-major `d x d`.
    pub fn second_moment(&self) -> Vec<f64> {
        let m = self.mean();
        let d = m.len();
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = if i == j {
                    match self {
                        JumpFamily::Point { value } => value[i] * value[i],
                        JumpFamily::Gauss { mean, sd } => mean[i] * mean[i] + sd[i] * sd[i],
                        JumpFamily::Uniform { low, high } => {
                            let (a, b) = (low[i], high[i]);
                            (a * a + a * b + b * b) / 3.0
                        }
                    }
                } else {
                    m[i] * m[j]
                };
            }
        }
        out
    }

    /// Lebesgue density of the normalised law; `None` for point masses.
    pub fn density(&self, v: &[f64]) -> Option<f64> {
        match self {
            JumpFamily::Point { .. } => None,
            JumpFamily::Gauss { mean, sd } => Some(
                v.iter()
                    .zip(mean.iter().zip(sd))
                    .map(|(x, (m, s))| {
                        let z = (x - m) / s;
                        (-0.5 * z * z).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
                    })
                    .product(),
            ),
            JumpFamily::Uniform { low, high } => Some(
                v.iter()
                    .zip(low.iter().zip(high))
                    .map(|(x, (a, b))| if *x >= *a && *x <= *b { 1.0 / (b - a) } else { 0.0 })
                    .product(),
            ),
        }
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            JumpFamily::Point { value } => out.copy_from_slice(value),
            JumpFamily::Gauss { mean, sd } => {
                for (o, (m, s)) in out.iter_mut().zip(mean.iter().zip(sd)) {
                    let z: f64 = StandardNormal.sample(rng);
                    *o = m + s * z;
                }
            }
            JumpFamily::Uniform { low, high } => {
                for (o, (a, b)) in out.iter_mut().zip(low.iter().zip(high)) {
                    *o = a + (b - a) * rng.random::<f64>();
                }
            }
        }
    }

    /// Support box of coordinate `i` used for quadrature.
    fn coord_range(&self, i: usize) -> (f64, f64) {
        match self {
            JumpFamily::Point { value } => (value[i], value[i]),
            JumpFamily::Gauss { mean, sd } => (mean[i] - GAUSS_SPAN * sd[i], mean[i] + GAUSS_SPAN * sd[i]),
            JumpFamily::Uniform { low, high } => (low[i], high[i]),
        }
    }

    fn coord_density(&self, i: usize, v: f64) -> f64 {
        match self {
            JumpFamily::Point { .. } => 1.0,
            JumpFamily::Gauss { mean, sd } => {
                let z = (v - mean[i]) / sd[i];
                (-0.5 * z * z).exp() / (sd[i] * (2.0 * std::f64::consts::PI).sqrt())
            }
            JumpFamily::Uniform { low, high } => 1.0 / (high[i] - low[i]),
        }
    }

    /// `E[g(v)]` under the normalised law, by nested adaptive quadrature.
    pub fn expect<G: TestFn + ?Sized>(&self, g: &G, tol: f64) -> Result<f64> {
        let d = self.dim();
        if let JumpFamily::Point { value } = self {
            return Ok(g.eval(value));
        }
        let mut prefix = Vec::with_capacity(d);
        self.expect_from(g, 0, &mut prefix, tol)
    }

    fn expect_from<G: TestFn + ?Sized>(&self, g: &G, k: usize, prefix: &mut Vec<f64>, tol: f64) -> Result<f64> {
        let d = self.dim();
        if k == d {
            return Ok(g.eval(prefix));
        }
        let (lo, hi) = self.coord_range(k);
        if lo == hi {
            prefix.push(lo);
            let r = self.expect_from(g, k + 1, prefix, tol);
            prefix.pop();
            return r;
        }
        let mut breaks = Vec::new();
        if let JumpFamily::Gauss { mean, .. } = self {
            breaks.push(mean[k]);
        }
        if k + 1 == d {
            let s: f64 = prefix.iter().map(|x| x * x).sum();
            for r in g.radial_breaks() {
                let rem = r * r - s;
                if rem > 0.0 {
                    breaks.push(rem.sqrt());
                    breaks.push(-rem.sqrt());
                }
            }
        }
        let inner_tol = tol / (hi - lo).max(1.0);
        let failure = std::cell::RefCell::new(None);
        let cell = std::cell::RefCell::new(std::mem::take(prefix));
        let value = integrate(
            |v| {
                let mut p = cell.borrow_mut();
                p.push(v);
                let inner = self.expect_from(g, k + 1, &mut p, inner_tol);
                p.pop();
                match inner {
                    Ok(val) => val * self.coord_density(k, v),
                    Err(e) => {
                        failure.borrow_mut().get_or_insert(e);
                        0.0
                    }
                }
            },
            lo,
            hi,
            &breaks,
            tol,
        );
        *prefix = cell.into_inner();
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        value
    }
}

/// One mixture component of a state's big-jump kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpComponent {
    pub family: JumpFamily,
    /// Base rate `lambda0`.
    pub rate: f64,
    /// Rate growth `kappa`.
    pub kappa: f64,
    /// Growth cap `ucap`.
    pub ucap: f64,
}

impl JumpComponent {
    pub fn new(family: JumpFamily, rate: f64) -> Self {
        Self { family, rate, kappa: 0.0, ucap: 0.0 }
    }

    pub fn with_growth(mut self, kappa: f64, ucap: f64) -> Self {
        self.kappa = kappa;
        self.ucap = ucap;
        self
    }

    pub fn rate_at(&self, u: &[f64]) -> f64 {
        if self.kappa == 0.0 {
            return self.rate;
        }
        self.rate * (1.0 + self.kappa * norm(u).min(self.ucap))
    }

    /// `sup_u lambda(u)`.
    pub fn rate_bound(&self) -> f64 {
        self.rate * (1.0 + self.kappa * self.ucap)
    }

    /// `d lambda / d u` in one dimension.
    pub fn rate_derivative_1d(&self, u: f64) -> f64 {
        if self.kappa == 0.0 || u.abs() >= self.ucap || u == 0.0 {
            return 0.0;
        }
        self.rate * self.kappa * u.signum()
    }

    pub fn is_position_independent(&self) -> bool {
        self.rate == 0.0 || self.kappa == 0.0 || self.ucap == 0.0
    }

    fn validate(&self, at: &str) -> Result<()> {
        self.family.validate(at)?;
        for (name, v) in [("rate", self.rate), ("kappa", self.kappa), ("ucap", self.ucap)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Invalid(format!("{at}: {name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// One saturating ramp `slope * clamp(u, -cap, cap)`, applied coordinate-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Ramp {
    pub slope: Vec<f64>,
    pub cap: f64,
}

/// Small-jump displacement `d(u) = offset + sum_k slope_k * clamp(u, -cap_k, cap_k)`.
///
/// Constant displacements have no ramps. The class is closed under linear
/// combination, which lets the averaged drift be written in the same form.
#[derive(Debug, Clone, PartialEq)]
pub struct Displacement {
    pub offset: Vec<f64>,
    pub ramps: Vec<Ramp>,
}

impl Displacement {
    pub fn constant(offset: Vec<f64>) -> Self {
        Self { offset, ramps: Vec::new() }
    }

    pub fn zero(dim: usize) -> Self {
        Self::constant(vec![0.0; dim])
    }

    pub fn with_ramp(mut self, slope: Vec<f64>, cap: f64) -> Self {
        self.ramps.push(Ramp { slope, cap });
        self
    }

    pub fn eval_into(&self, u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.offset);
        for r in &self.ramps {
            for (i, o) in out.iter_mut().enumerate() {
                *o += r.slope[i] * u[i].clamp(-r.cap, r.cap);
            }
        }
    }

    pub fn eval(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.offset.len()];
        self.eval_into(u, &mut out);
        out
    }

    /// `d d_0 / d u_0`, one-sided at kinks is not needed: callers stay off them.
    pub fn derivative_1d(&self, u: f64) -> f64 {
        self.ramps
            .iter()
            .filter(|r| u.abs() < r.cap)
            .map(|r| r.slope[0])
            .sum()
    }

    pub fn is_constant(&self) -> bool {
        self.ramps.iter().all(|r| r.cap == 0.0 || r.slope.iter().all(|&s| s == 0.0))
    }

    /// `sum_k w_k d_k`.
    pub fn combine(dim: usize, terms: &[(f64, &Displacement)]) -> Self {
        let mut out = Displacement::zero(dim);
        for (w, d) in terms {
            if *w == 0.0 {
                continue;
            }
            for (o, v) in out.offset.iter_mut().zip(&d.offset) {
                *o += w * v;
            }
            for r in &d.ramps {
                out.ramps.push(Ramp { slope: r.slope.iter().map(|s| w * s).collect(), cap: r.cap });
            }
        }
        out
    }

    fn validate(&self, dim: usize, at: &str) -> Result<()> {
        if self.offset.len() != dim || self.ramps.iter().any(|r| r.slope.len() != dim) {
            return Err(Error::Dimension { expected: dim, got: self.offset.len() });
        }
        if self.offset.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("{at}: offset must be finite")));
        }
        for r in &self.ramps {
            if !(r.cap.is_finite() && r.cap >= 0.0) || r.slope.iter().any(|s| !s.is_finite()) {
                return Err(Error::Invalid(format!("{at}: ramp needs finite slope and cap >= 0")));
            }
        }
        Ok(())
    }
}

/// Dynamics of `xi` while the switching chain sits in one state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDynamics {
    pub components: Vec<JumpComponent>,
    /// Small-jump rate `rho(x)`.
    pub rho: f64,
    pub displacement: Displacement,
}

/// Gaussian bump `f(v) = exp(-|v - center|^2 / (2 width^2))` used as the
/// jump-size weight in the density growth bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Envelope {
    pub center: Vec<f64>,
    pub width: f64,
}

impl Envelope {
    pub fn eval(&self, v: &[f64]) -> f64 {
        let r2: f64 = v.iter().zip(&self.center).map(|(a, c)| (a - c) * (a - c)).sum();
        (-0.5 * r2 / (self.width * self.width)).exp()
    }
}

/// Per-state big-jump kernels and small-jump drifts.
#[derive(Debug)]
pub struct JumpModel {
    dim: usize,
    states: Vec<StateDynamics>,
    growth_bound: Option<f64>,
    envelope: Option<Envelope>,
    unit_g: OnceLock<Result<Vec<Vec<[f64; 3]>>>>,
}

impl Clone for JumpModel {
    fn clone(&self) -> Self {
        Self {
            dim: self.dim,
            states: self.states.clone(),
            growth_bound: self.growth_bound,
            envelope: self.envelope.clone(),
            unit_g: OnceLock::new(),
        }
    }
}

impl PartialEq for JumpModel {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.states == other.states
            && self.growth_bound == other.growth_bound
            && self.envelope == other.envelope
    }
}

/// First-moment data at `(u, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMean {
    /// `int v Gamma(u, dv; x)`.
    pub jump_mean: Vec<f64>,
    /// `b(u; x)`.
    pub drift: Vec<f64>,
}

impl JumpModel {
    pub fn new(dim: usize, states: Vec<StateDynamics>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("dimension must be >= 1".into()));
        }
        if states.is_empty() {
            return Err(Error::EmptyChain);
        }
        for (x, s) in states.iter().enumerate() {
            for (k, c) in s.components.iter().enumerate() {
                let at = format!("jumps[{x}][{k}]");
                if c.family.dim() != dim {
                    return Err(Error::Invalid(format!(
                        "{at}: jump dimension {} does not match model dimension {dim}",
                        c.family.dim()
                    )));
                }
                c.validate(&at)?;
            }
            if !(s.rho.is_finite() && s.rho >= 0.0) {
                return Err(Error::Invalid(format!("drift.rho[{x}] = {} must be finite and >= 0", s.rho)));
            }
            s.displacement.validate(dim, &format!("drift.d[{x}]"))?;
        }
        Ok(Self { dim, states, growth_bound: None, envelope: None, unit_g: OnceLock::new() })
    }

    pub fn with_growth_bound(mut self, l: f64) -> Result<Self> {
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::Invalid(format!("growth_bound = {l} must be finite and > 0")));
        }
        self.growth_bound = Some(l);
        Ok(self)
    }

    pub fn with_envelope(mut self, env: Envelope) -> Result<Self> {
        if env.center.len() != self.dim || !(env.width > 0.0) {
            return Err(Error::Invalid("envelope needs center of model dimension and width > 0".into()));
        }
        self.envelope = Some(env);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[StateDynamics] {
        &self.states
    }

    pub fn state(&self, x: usize) -> &StateDynamics {
        &self.states[x]
    }

    pub fn growth_bound(&self) -> Option<f64> {
        self.growth_bound
    }

    pub fn envelope(&self) -> Option<&Envelope> {
        self.envelope.as_ref()
    }

    /// Envelope used by the density bound: the declared one, otherwise a bump
    /// centred at 0 wide enough to cover every density component.
    pub fn effective_envelope(&self) -> Envelope {
        if let Some(e) = &self.envelope {
            return e.clone();
        }
        let mut width: f64 = 1.0;
        for s in &self.states {
            for c in &s.components {
                match &c.family {
                    JumpFamily::Gauss { mean, sd } => {
                        for (m, sd) in mean.iter().zip(sd) {
                            width = width.max(m.abs() + 4.0 * sd);
                        }
                    }
                    JumpFamily::Uniform { low, high } => {
                        for (a, b) in low.iter().zip(high) {
                            width = width.max(a.abs()).max(b.abs());
                        }
                    }
                    JumpFamily::Point { .. } => {}
                }
            }
        }
        Envelope { center: vec![0.0; self.dim], width }
    }

    /// `Gamma(u, R^d; x)`.
    pub fn total_rate(&self, u: &[f64], x: usize) -> f64 {
        self.states[x].components.iter().map(|c| c.rate_at(u)).sum()
    }

    /// `sup_u Gamma(u, R^d; x)`.
    pub fn rate_bound(&self, x: usize) -> f64 {
        self.states[x].components.iter().map(JumpComponent::rate_bound).sum()
    }

    /// True when neither rates nor displacement depend on the position.
    pub fn is_position_independent(&self) -> bool {
        self.states.iter().all(|s| {
            s.components.iter().all(JumpComponent::is_position_independent) && s.displacement.is_constant()
        })
    }

    /// `int v Gamma(u, dv; x)` and `b(u; x)` from closed-form component means.
    pub fn kernel_mean(&self, u: &[f64], x: usize) -> KernelMean {
        let s = &self.states[x];
        let mut jump_mean = vec![0.0; self.dim];
        for c in &s.components {
            let lam = c.rate_at(u);
            for (o, m) in jump_mean.iter_mut().zip(c.family.mean()) {
                *o += lam * m;
            }
        }
        let d = s.displacement.eval(u);
        let drift = jump_mean.iter().zip(&d).map(|(j, d)| j + s.rho * d).collect();
        KernelMean { jump_mean, drift }
    }

    /// `b(u; x)` written into `out`.
    pub fn drift_into(&self, u: &[f64], x: usize, out: &mut [f64]) {
        let s = &self.states[x];
        s.displacement.eval_into(u, out);
        out.iter_mut().for_each(|o| *o *= s.rho);
        for c in &s.components {
            let lam = c.rate_at(u);
            match &c.family {
                JumpFamily::Point { value } => out.iter_mut().zip(value).for_each(|(o, v)| *o += lam * v),
                JumpFamily::Gauss { mean, .. } => out.iter_mut().zip(mean).for_each(|(o, v)| *o += lam * v),
                JumpFamily::Uniform { low, high } => out
                    .iter_mut()
                    .zip(low.iter().zip(high))
                    .for_each(|(o, (a, b))| *o += lam * 0.5 * (a + b)),
            }
        }
    }

    /// `d b_0 / d u_0` for one-dimensional models (analytic, off kinks).
    pub fn drift_derivative_1d(&self, u: f64, x: usize) -> f64 {
        let s = &self.states[x];
        let mut out = s.rho * s.displacement.derivative_1d(u);
        for c in &s.components {
            out += c.rate_derivative_1d(u) * c.family.mean()[0];
        }
        out
    }

    /// `c(u; x) = int v v^T Gamma(u, dv; x)`, row-major `d x d`.
    pub fn kernel_second_moment(&self, u: &[f64], x: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim * self.dim];
        for c in &self.states[x].components {
            let lam = c.rate_at(u);
            for (o, m) in out.iter_mut().zip(c.family.second_moment()) {
                *o += lam * m;
            }
        }
        out
    }

    /// `Gamma_g(u; x) = int g(v) Gamma(u, dv; x)` by adaptive quadrature.
    pub fn kernel_g_moment<G: TestFn + ?Sized>(&self, u: &[f64], x: usize, g: &G) -> Result<f64> {
        let comps = &self.states[x].components;
        let mut total = 0.0;
        let active = comps.iter().filter(|c| c.rate > 0.0).count().max(1);
        for c in comps {
            let lam = c.rate_at(u);
            if lam == 0.0 {
                continue;
            }
            let tol = (G_MOMENT_TOL / (active as f64 * lam)).min(UNIT_TOL);
            total += lam * c.family.expect(g, tol)?;
        }
        Ok(total)
    }

    fn unit_g_table(&self) -> Result<&Vec<Vec<[f64; 3]>>> {
        self.unit_g
            .get_or_init(|| {
                self.states
                    .iter()
                    .map(|s| {
                        s.components
                            .iter()
                            .map(|c| {
                                let mut row = [0.0; 3];
                                for (r, g) in row.iter_mut().zip(GProbe::CATALOGUE.iter()) {
                                    *r = c.family.expect(g, UNIT_TOL)?;
                                }
                                Ok(row)
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    /// `Gamma_g(u; x)` for the three catalogue probes. Only rates depend on
    /// `u`, so the normalised expectations are computed once and cached.
    pub fn catalogue_g_moments(&self, u: &[f64], x: usize) -> Result<[f64; 3]> {
        let table = self.unit_g_table()?;
        let mut out = [0.0; 3];
        for (c, row) in self.states[x].components.iter().zip(&table[x]) {
            let lam = c.rate_at(u);
            for (o, r) in out.iter_mut().zip(row) {
                *o += lam * r;
            }
        }
        Ok(out)
    }

    /// Draws a big-jump size at `(u, x)` into `out`. `total` must equal
    /// `total_rate(u, x)` and be positive.
    pub fn sample_jump<R: Rng + ?Sized>(&self, u: &[f64], x: usize, total: f64, rng: &mut R, out: &mut [f64]) {
        let comps = &self.states[x].components;
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = None;
        for c in comps {
            let lam = c.rate_at(u);
            if lam > 0.0 {
                acc += lam;
                chosen = Some(c);
                if target < acc {
                    break;
                }
            }
        }
        if let Some(c) = chosen {
            c.family.sample_into(rng, out);
        }
    }
}

/// The pre-limit kernel `Gamma_eps` of a model at a fixed `eps`.
#[derive(Debug, Clone, Copy)]
pub struct PrelimitKernel<'a> {
    pub model: &'a JumpModel,
    pub eps: f64,
}

impl<'a> PrelimitKernel<'a> {
    pub fn new(model: &'a JumpModel, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(Error::Argument(format!("eps = {eps} must lie in (0, 1]")));
        }
        Ok(Self { model, eps })
    }

    /// Total event rate at the accelerated clock: `Gamma(u, R^d; x) + rho / eps`.
    pub fn total_rate(&self, u: &[f64], x: usize) -> f64 {
        self.model.total_rate(u, x) + self.model.state(x).rho / self.eps
    }

    /// Small-jump size `eps d(u; x)`.
    pub fn small_jump(&self, u: &[f64], x: usize) -> Vec<f64> {
        let mut d = self.model.state(x).displacement.eval(u);
        d.iter_mut().for_each(|v| *v *= self.eps);
        d
    }

    /// `eps^-1 int v Gamma_eps(u, dv; x)`. Both parts of the kernel carry one
    /// factor of `eps` that cancels against the prefactor exactly.
    pub fn scaled_mean(&self, u: &[f64], x: usize) -> Vec<f64> {
        let s = self.model.state(x);
        let big = self.model.kernel_mean(u, x).jump_mean;
        let d = s.displacement.eval(u);
        big.iter().zip(&d).map(|(b, d)| b + s.rho * d).collect()
    }

    /// `eps^-1 int v v^T Gamma_eps(u, dv; x)`.
    pub fn scaled_second_moment(&self, u: &[f64], x: usize) -> Vec<f64> {
        let s = self.model.state(x);
        let mut c = self.model.kernel_second_moment(u, x);
        let d = s.displacement.eval(u);
        let dim = d.len();
        for i in 0..dim {
            for j in 0..dim {
                c[i * dim + j] += s.rho * self.eps * d[i] * d[j];
            }
        }
        c
    }

    /// `eps^-1 int g(v) Gamma_eps(u, dv; x)` given the big-jump part
    /// `Gamma_g(u; x)`.
    pub fn scaled_g_moment_from<G: TestFn + ?Sized>(&self, big: f64, u: &[f64], x: usize, g: &G) -> f64 {
        let s = self.model.state(x);
        big + s.rho * g.eval(&self.small_jump(u, x)) / self.eps
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn frobenius(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One `(eps, u, x)` row of the approximation-condition ledger.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PaRow {
    pub eps: f64,
    pub u: Vec<f64>,
    pub state: usize,
    pub theta_b: f64,
    pub theta_c: f64,
    pub theta_c_closed: f64,
    pub theta_g: Vec<f64>,
    pub theta_g_closed: Vec<f64>,
}

/// Per-eps suprema over `(u, x)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PaSummary {
    pub eps: f64,
    pub theta_b: f64,
    pub theta_c: f64,
    pub theta_g: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PaReport {
    pub probes: Vec<String>,
    pub rows: Vec<PaRow>,
    pub summary: Vec<PaSummary>,
    /// Largest deviation of a computed theta from its closed form.
    pub max_closed_form_gap: f64,
    pub failures: Vec<String>,
}

impl PaReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

const MONOTONE_JITTER: f64 = 1e-12;

/// Tabulates the error terms of the mean, second-moment and kernel
/// approximation conditions over an `eps` grid (descending) and a `u` grid,
/// and checks every column is non-increasing as `eps` decreases.
pub fn validate_pa(model: &JumpModel, eps_grid: &[f64], u_grid: &[Vec<f64>], probes: &[GProbe]) -> Result<PaReport> {
    if eps_grid.is_empty() {
        return Err(Error::Argument("empty eps grid".into()));
    }
    if eps_grid.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(Error::Argument("eps grid must be strictly descending".into()));
    }
    for u in u_grid {
        if u.len() != model.dim() {
            return Err(Error::Dimension { expected: model.dim(), got: u.len() });
        }
    }
    let dim = model.dim();
    // Gamma_g(u; x) does not depend on eps
    let mut big_g = Vec::with_capacity(u_grid.len());
    for u in u_grid {
        let mut per_x = Vec::with_capacity(model.n_states());
        for x in 0..model.n_states() {
            per_x.push(
                probes
                    .iter()
                    .map(|g| model.kernel_g_moment(u, x, g))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        big_g.push(per_x);
    }

    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let mut max_gap: f64 = 0.0;
    for &eps in eps_grid {
        let kernel = PrelimitKernel::new(model, eps)?;
        let mut sup = PaSummary { eps, theta_b: 0.0, theta_c: 0.0, theta_g: vec![0.0; probes.len()] };
        for (ui, u) in u_grid.iter().enumerate() {
            for x in 0..model.n_states() {
                let s = model.state(x);
                let b = model.kernel_mean(u, x).drift;
                let theta_b_vec: Vec<f64> = kernel.scaled_mean(u, x).iter().zip(&b).map(|(a, b)| a - b).collect();
                let c = model.kernel_second_moment(u, x);
                let theta_c_vec: Vec<f64> =
                    kernel.scaled_second_moment(u, x).iter().zip(&c).map(|(a, b)| a - b).collect();
                let d = s.displacement.eval(u);
                let closed_c: Vec<f64> = (0..dim * dim)
                    .map(|k| eps * s.rho * d[k / dim] * d[k % dim])
                    .collect();
                let gap_c = theta_c_vec
                    .iter()
                    .zip(&closed_c)
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                max_gap = max_gap.max(gap_c);

                let mut theta_g = Vec::with_capacity(probes.len());
                let mut theta_g_closed = Vec::with_capacity(probes.len());
                let small: Vec<f64> = d.iter().map(|v| eps * v).collect();
                for (k, g) in probes.iter().enumerate() {
                    let big = big_g[ui][x][k];
                    let t = kernel.scaled_g_moment_from(big, u, x, g) - big;
                    let closed = s.rho * g.eval(&small) / eps;
                    max_gap = max_gap.max((t - closed).abs());
                    theta_g.push(t);
                    theta_g_closed.push(closed);
                }
                let row = PaRow {
                    eps,
                    u: u.clone(),
                    state: x,
                    theta_b: max_abs(&theta_b_vec),
                    theta_c: max_abs(&theta_c_vec),
                    theta_c_closed: max_abs(&closed_c),
                    theta_g,
                    theta_g_closed,
                };
                sup.theta_b = sup.theta_b.max(row.theta_b);
                sup.theta_c = sup.theta_c.max(row.theta_c);
                for (s, t) in sup.theta_g.iter_mut().zip(&row.theta_g) {
                    *s = s.max(t.abs());
                }
                rows.push(row);
            }
        }
        summary.push(sup);
    }

    let mut failures = Vec::new();
    let check = |name: &str, col: Vec<f64>, failures: &mut Vec<String>| {
        for (k, w) in col.windows(2).enumerate() {
            if w[1] > w[0] + MONOTONE_JITTER {
                failures.push(format!(
                    "{name}: theta increases from {:e} at eps = {} to {:e} at eps = {}",
                    w[0],
                    eps_grid[k],
                    w[1],
                    eps_grid[k + 1]
                ));
            }
        }
    };
    check("mean approximation (theta_b)", summary.iter().map(|s| s.theta_b).collect(), &mut failures);
    check("second-moment approximation (theta_c)", summary.iter().map(|s| s.theta_c).collect(), &mut failures);
    for (k, g) in probes.iter().enumerate() {
        check(
            &format!("kernel approximation (theta_g, g = {})", g.name()),
            summary.iter().map(|s| s.theta_g[k]).collect(),
            &mut failures,
        );
    }
    Ok(PaReport { probes: probes.iter().map(GProbe::name).collect(), rows, summary, max_closed_form_gap: max_gap, failures })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailRow {
    pub c: f64,
    /// `sup_{u, x} int_{|v| > c} |v|^2 Gamma(u, dv; x)`.
    pub tail: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthViolation {
    pub u: Vec<f64>,
    pub state: usize,
    pub bound: String,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct C3C4Report {
    pub tails: Vec<TailRow>,
    pub tail_limit: f64,
    /// Declared `L`, or the smallest `L` consistent with the grid when none
    /// was declared.
    pub growth_bound: f64,
    pub growth_bound_declared: bool,
    pub envelope: Envelope,
    pub violations: Vec<GrowthViolation>,
    /// Components without a Lebesgue density (point masses); they satisfy
    /// every moment bound but are outside the density form of the bound.
    pub notes: Vec<String>,
    pub failures: Vec<String>,
}

impl C3C4Report {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub const C3_TAIL_LIMIT: f64 = 1e-6;

fn density_grid(family: &JumpFamily) -> Vec<Vec<f64>> {
    let d = family.dim();
    let per_axis = if d == 1 { 201 } else { 21usize.min((100_000f64.powf(1.0 / d as f64)) as usize).max(3) };
    let axes: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let (lo, hi) = match family {
                JumpFamily::Gauss { mean, sd } => (mean[i] - 8.0 * sd[i], mean[i] + 8.0 * sd[i]),
                _ => family.coord_range(i),
            };
            (0..per_axis).map(|k| lo + (hi - lo) * k as f64 / (per_axis - 1) as f64).collect()
        })
        .collect();
    let mut grid = vec![Vec::new()];
    for axis in &axes {
        let mut next = Vec::with_capacity(grid.len() * axis.len());
        for p in &grid {
            for &a in axis {
                let mut q = p.clone();
                q.push(a);
                next.push(q);
            }
        }
        grid = next;
    }
    grid
}

/// Uniform square-integrability (tail second moments over a `c` grid) and
/// linear-growth bounds over a `u` grid.
pub fn validate_c3_c4(model: &JumpModel, c_grid: &[f64], u_grid: &[Vec<f64>]) -> Result<C3C4Report> {
    if c_grid.is_empty() || c_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Argument("c grid must be non-empty and strictly increasing".into()));
    }
    for u in u_grid {
        if u.len() != model.dim() {
            return Err(Error::Dimension { expected: model.dim(), got: u.len() });
        }
    }
    let mut failures = Vec::new();

    let mut tails = Vec::with_capacity(c_grid.len());
    for &c in c_grid {
        let g = GProbe::TailSquare { threshold: c };
        let mut sup: f64 = 0.0;
        for u in u_grid {
            for x in 0..model.n_states() {
                sup = sup.max(model.kernel_g_moment(u, x, &g)?);
            }
        }
        tails.push(TailRow { c, tail: sup });
    }
    for w in tails.windows(2) {
        if w[1].tail > w[0].tail + MONOTONE_JITTER {
            failures.push(format!("C3: tail increases between c = {} and c = {}", w[0].c, w[1].c));
        }
    }
    let last = tails.last().expect("non-empty grid");
    if last.tail >= C3_TAIL_LIMIT {
        failures.push(format!("C3: tail {:e} at c = {} is not below {C3_TAIL_LIMIT:e}", last.tail, last.c));
    }

    let envelope = model.effective_envelope();
    let mut notes = Vec::new();
    let mut grids: Vec<Vec<Vec<Vec<f64>>>> = Vec::new();
    for (x, s) in model.states().iter().enumerate() {
        let mut per = Vec::new();
        for (k, c) in s.components.iter().enumerate() {
            if matches!(c.family, JumpFamily::Point { .. }) {
                notes.push(format!("jumps[{x}][{k}] is a point mass: no density, excluded from the density bound"));
            }
            per.push(density_grid(&c.family));
        }
        grids.push(per);
    }

    // (u, x, bound, lhs, weight) with the bound reading lhs <= L * weight
    let mut checks: Vec<(Vec<f64>, usize, String, f64, f64)> = Vec::new();
    for u in u_grid {
        let un = norm(u);
        for x in 0..model.n_states() {
            let b = model.kernel_mean(u, x).drift;
            checks.push((u.clone(), x, "|b(u;x)| <= L(1+|u|)".into(), norm(&b), 1.0 + un));
            let c = model.kernel_second_moment(u, x);
            checks.push((u.clone(), x, "|c(u;x)| <= L(1+|u|^2)".into(), frobenius(&c), 1.0 + un * un));
            let comps = &model.state(x).components;
            for grid in &grids[x] {
                for v in grid {
                    let dens: f64 = comps
                        .iter()
                        .filter_map(|c| c.family.density(v).map(|p| c.rate_at(u) * p))
                        .sum();
                    if dens > 0.0 {
                        let f = envelope.eval(v);
                        checks.push((u.clone(), x, format!("Lambda(u,v;x) <= L f(v)(1+|u|) at v = {v:?}"), dens, f * (1.0 + un)));
                    }
                }
            }
        }
    }

    let (growth_bound, declared) = match model.growth_bound() {
        Some(l) => (l, true),
        None => {
            let l = checks
                .iter()
                .map(|(_, _, _, lhs, w)| if *w > 0.0 { lhs / w } else if *lhs > 0.0 { f64::INFINITY } else { 0.0 })
                .fold(0.0f64, f64::max);
            (l, false)
        }
    };
    let mut violations = Vec::new();
    for (u, x, bound, lhs, w) in checks {
        let rhs = growth_bound * w;
        if !(lhs <= rhs * (1.0 + 1e-12)) {
            violations.push(GrowthViolation { u, state: x, bound, lhs, rhs });
        }
    }
    if !growth_bound.is_finite() {
        failures.push("C4: no finite growth constant fits the grid".into());
    }
    for v in violations.iter().take(20) {
        failures.push(format!("C4: {} violated at u = {:?}, x = {}: {:e} > {:e}", v.bound, v.u, v.state, v.lhs, v.rhs));
    }
    Ok(C3C4Report {
        tails,
        tail_limit: C3_TAIL_LIMIT,
        growth_bound,
        growth_bound_declared: declared,
        envelope,
        violations,
        notes,
        failures,
    })
}
