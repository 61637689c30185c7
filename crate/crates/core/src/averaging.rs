//! Averaged limit model and the perturbed-test-function check.
//!
//! The limit of the switched process is obtained by averaging the drift and
//! the jump kernel against the stationary law of the switching chain:
//!
//! ```text
//! b_avg(u)        = sum_x pi(x) b(u; x)
//! Gamma_avg(u,dv) = sum_x pi(x) Gamma(u, dv; x)
//! ```
//!
//! Between jumps the limit follows the flow drift
//! `b_avg(u) - int v Gamma_avg(u, dv)`, which with the pre-limit family of
//! this crate is `sum_x pi(x) rho(x) d(u; x)`.
//!
//! The averaged model is stored as a single-state [`JumpModel`]: each
//! component of state `x` reappears with its base rate multiplied by
//! `pi(x)`, and the displacement is the `pi rho`-weighted combination of the
//! per-state displacements (with `rho = 1`).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::jump_model::{Displacement, JumpComponent, JumpFamily, JumpModel, StateDynamics};
use crate::probe::SmoothProbe;
use crate::switching::{build_generator, solve_poisson, stationary_distribution, StationaryLaw, SwitchSpec};

/// Gap below which the compound-Poisson limit is used.
pub const PA3_TOL: f64 = 1e-9;
/// Spacing of the centred differences in [`perturbation_residual`].
pub const FD_STEP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct LimitModel {
    averaged: JumpModel,
    pi: StationaryLaw,
}

/// Compound Poisson jump law: `(rate, law)` pairs; total rate is the sum.
#[derive(Debug, Clone, PartialEq)]
pub struct CompoundPoisson {
    pub components: Vec<(f64, JumpFamily)>,
}

impl CompoundPoisson {
    pub fn new(components: Vec<(f64, JumpFamily)>) -> Result<Self> {
        if components.iter().any(|(r, _)| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Invalid("compound Poisson rates must be finite and >= 0".into()));
        }
        let dims: Vec<usize> = components.iter().map(|(_, f)| f.dim()).collect();
        if dims.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::Invalid("compound Poisson components differ in dimension".into()));
        }
        Ok(Self { components })
    }

    /// Total rate `Lambda`.
    pub fn rate(&self) -> f64 {
        self.components.iter().map(|(r, _)| r).sum()
    }
}

impl LimitModel {
    pub fn model(&self) -> &JumpModel {
        &self.averaged
    }

    pub fn stationary(&self) -> &StationaryLaw {
        &self.pi
    }

    pub fn dim(&self) -> usize {
        self.averaged.dim()
    }

    /// Averaged drift `b_avg(u)`.
    pub fn drift(&self, u: &[f64]) -> Vec<f64> {
        self.averaged.kernel_mean(u, 0).drift
    }

    /// `int v Gamma_avg(u, dv)`.
    pub fn jump_mean(&self, u: &[f64]) -> Vec<f64> {
        self.averaged.kernel_mean(u, 0).jump_mean
    }

    /// Flow drift `b_avg(u) - int v Gamma_avg(u, dv)`.
    pub fn flow_drift(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.flow_drift_into(u, &mut out);
        out
    }

    pub fn flow_drift_into(&self, u: &[f64], out: &mut [f64]) {
        let s = self.averaged.state(0);
        s.displacement.eval_into(u, out);
        out.iter_mut().for_each(|o| *o *= s.rho);
    }

    pub fn has_flow(&self) -> bool {
        let s = self.averaged.state(0);
        s.rho > 0.0 && !(s.displacement.offset.iter().all(|&v| v == 0.0) && s.displacement.is_constant())
    }

    pub fn total_rate(&self, u: &[f64]) -> f64 {
        self.averaged.total_rate(u, 0)
    }

    pub fn rate_bound(&self) -> f64 {
        self.averaged.rate_bound(0)
    }

    /// `Lambda = Gamma_avg(R^d)` when the kernel does not depend on `u`.
    pub fn constant_rate(&self) -> Option<f64> {
        self.averaged
            .state(0)
            .components
            .iter()
            .all(JumpComponent::is_position_independent)
            .then(|| self.averaged.rate_bound(0))
    }

    /// The compound Poisson description of the limit, available when the
    /// model is position independent and the flow drift vanishes.
    pub fn compound_poisson(&self) -> Option<CompoundPoisson> {
        if !self.averaged.is_position_independent() {
            return None;
        }
        let zero = vec![0.0; self.dim()];
        let flow = self.flow_drift(&zero);
        if flow.iter().any(|v| v.abs() > PA3_TOL) {
            return None;
        }
        Some(CompoundPoisson {
            components: self
                .averaged
                .state(0)
                .components
                .iter()
                .filter(|c| c.rate > 0.0)
                .map(|c| (c.rate, c.family.clone()))
                .collect(),
        })
    }
}

/// Averages `model` against `pi`.
pub fn assemble_limit(model: &JumpModel, pi: &StationaryLaw) -> Result<LimitModel> {
    if pi.len() != model.n_states() {
        return Err(Error::Dimension { expected: model.n_states(), got: pi.len() });
    }
    let p = pi.probs();
    let mut components = Vec::new();
    for (x, s) in model.states().iter().enumerate() {
        for c in &s.components {
            let mut c = c.clone();
            c.rate *= p[x];
            components.push(c);
        }
    }
    let terms: Vec<(f64, &Displacement)> = model
        .states()
        .iter()
        .enumerate()
        .map(|(x, s)| (p[x] * s.rho, &s.displacement))
        .collect();
    let displacement = Displacement::combine(model.dim(), &terms);
    let mut averaged = JumpModel::new(model.dim(), vec![StateDynamics { components, rho: 1.0, displacement }])?;
    if let Some(l) = model.growth_bound() {
        averaged = averaged.with_growth_bound(l)?;
    }
    if let Some(e) = model.envelope() {
        averaged = averaged.with_envelope(e.clone())?;
    }
    Ok(LimitModel { averaged, pi: pi.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pa3Report {
    pub position_independent: bool,
    /// `int v Gamma_avg(dv)`.
    pub jump_mean: Vec<f64>,
    /// `sum_x pi(x) b(x)`.
    pub averaged_drift: Vec<f64>,
    pub gap: f64,
    pub compound_poisson_enabled: bool,
}

/// Compares the two sides of the balance condition under which the limit is
/// a compound Poisson process.
pub fn check_pa3(model: &JumpModel, pi: &StationaryLaw) -> Result<Pa3Report> {
    let limit = assemble_limit(model, pi)?;
    let zero = vec![0.0; model.dim()];
    let jump_mean = limit.jump_mean(&zero);
    let mut averaged_drift = vec![0.0; model.dim()];
    for (x, p) in pi.probs().iter().enumerate() {
        for (a, b) in averaged_drift.iter_mut().zip(model.kernel_mean(&zero, x).drift) {
            *a += p * b;
        }
    }
    let gap = jump_mean
        .iter()
        .zip(&averaged_drift)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let position_independent = model.is_position_independent();
    Ok(Pa3Report {
        position_independent,
        jump_mean,
        averaged_drift,
        gap,
        compound_poisson_enabled: position_independent && gap <= PA3_TOL,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualRow {
    pub u: f64,
    pub state: usize,
    pub eps: f64,
    /// `L_eps (phi + eps phi1) - b_avg phi'`, with `d phi1 / du` by centred
    /// differences.
    pub residual: f64,
    /// `eps b(u; x) d phi1 / du` with the derivative solved exactly.
    pub closed_form: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualTable {
    pub probe: SmoothProbe,
    pub rows: Vec<ResidualRow>,
    /// Per eps (same order as the input grid): `max |r| / eps`.
    pub scaled_sup: Vec<f64>,
    /// `K = max |r| / eps` at the largest eps.
    pub k_fit: f64,
    /// `max / min` of `scaled_sup` (1 when the residual vanishes).
    pub spread: f64,
    pub max_closed_form_gap: f64,
    /// Grid points dropped because they sit within two difference steps of
    /// a kink of the model.
    pub skipped_u: Vec<f64>,
    pub bounded: bool,
}

pub fn write_residual_csv<W: std::io::Write>(table: &ResidualTable, mut w: W) -> std::io::Result<()> {
    writeln!(w, "u,x,eps,residual")?;
    for r in &table.rows {
        writeln!(w, "{},{},{},{}", r.u, r.state, r.eps, r.residual)?;
    }
    Ok(())
}

fn kinks_1d(model: &JumpModel) -> Vec<f64> {
    let mut k = Vec::new();
    for s in model.states() {
        for c in &s.components {
            if c.kappa != 0.0 && c.rate != 0.0 {
                k.extend([0.0, c.ucap, -c.ucap]);
            }
        }
        for r in &s.displacement.ramps {
            k.extend([r.cap, -r.cap]);
        }
    }
    k
}

/// Builds `phi1` from the Poisson equation of the switching generator at each
/// grid point and evaluates the residual of the perturbed generator
///
/// ```text
/// L_eps = eps^-1 Q + b(u; x) d/du
/// r(u, x; eps) = L_eps (phi + eps phi1)(u, x) - b_avg(u) phi'(u)
/// ```
///
/// whose exact value is `eps b(u; x) d phi1 / du`. One-dimensional models
/// only.
pub fn perturbation_residual(
    spec: &SwitchSpec,
    model: &JumpModel,
    probe: SmoothProbe,
    u_grid: &[f64],
    eps_grid: &[f64],
) -> Result<ResidualTable> {
    if model.dim() != 1 {
        return Err(Error::Argument("the perturbation residual is implemented for d = 1".into()));
    }
    if spec.len() != model.n_states() {
        return Err(Error::Dimension { expected: spec.len(), got: model.n_states() });
    }
    if eps_grid.is_empty() || eps_grid.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::Argument("eps grid must be non-empty and positive".into()));
    }
    let q = build_generator(spec)?;
    let pi = stationary_distribution(&q)?;
    let limit = assemble_limit(model, &pi)?;
    let n = spec.len();
    let h = FD_STEP;
    let kinks = kinks_1d(model);

    let rhs = |u: f64| -> Vec<f64> {
        let avg = limit.drift(&[u])[0];
        let dphi = probe.derivative(u);
        let mut f: Vec<f64> = (0..n).map(|x| (avg - model.kernel_mean(&[u], x).drift[0]) * dphi).collect();
        // remove the rounding-level mean so the centring check sees exact zero
        let c = pi.mean(&f);
        f.iter_mut().for_each(|v| *v -= c);
        f
    };
    let rhs_derivative = |u: f64| -> Vec<f64> {
        let dphi = probe.derivative(u);
        let d2phi = probe.second_derivative(u);
        let avg = limit.drift(&[u])[0];
        let davg: f64 = (0..n).map(|x| pi.probs()[x] * model.drift_derivative_1d(u, x)).sum();
        let mut f: Vec<f64> = (0..n)
            .map(|x| {
                let b = model.kernel_mean(&[u], x).drift[0];
                (davg - model.drift_derivative_1d(u, x)) * dphi + (avg - b) * d2phi
            })
            .collect();
        let c = pi.mean(&f);
        f.iter_mut().for_each(|v| *v -= c);
        f
    };

    let mut rows = Vec::new();
    let mut skipped_u = Vec::new();
    let mut max_gap: f64 = 0.0;
    for &u in u_grid {
        if kinks.iter().any(|k| (u - k).abs() < 2.0 * h) {
            skipped_u.push(u);
            continue;
        }
        let phi1 = solve_poisson(&q, &rhs(u), &pi)?;
        let phi1_up = solve_poisson(&q, &rhs(u + h), &pi)?;
        let phi1_dn = solve_poisson(&q, &rhs(u - h), &pi)?;
        let dphi1_exact = solve_poisson(&q, &rhs_derivative(u), &pi)?;
        let avg = limit.drift(&[u])[0];
        let phi = probe.value(u);
        let dphi = probe.derivative(u);
        for &eps in eps_grid {
            let perturbed: Vec<f64> = phi1.iter().map(|p| phi + eps * p).collect();
            let q_part = q.apply(&perturbed);
            for x in 0..n {
                let b = model.kernel_mean(&[u], x).drift[0];
                let dphi1 = (phi1_up[x] - phi1_dn[x]) / (2.0 * h);
                let generator = q_part[x] / eps + b * (dphi + eps * dphi1);
                let residual = generator - avg * dphi;
                let closed_form = eps * b * dphi1_exact[x];
                max_gap = max_gap.max((residual - closed_form).abs());
                rows.push(ResidualRow { u, state: x, eps, residual, closed_form });
            }
        }
    }

    let scaled_sup: Vec<f64> = eps_grid
        .iter()
        .map(|&eps| {
            rows.iter()
                .filter(|r| r.eps == eps)
                .fold(0.0f64, |m, r| m.max(r.residual.abs() / eps))
        })
        .collect();
    let largest = eps_grid.iter().enumerate().fold(0, |best, (i, &e)| if e > eps_grid[best] { i } else { best });
    let k_fit = scaled_sup[largest];
    let hi = scaled_sup.iter().copied().fold(0.0f64, f64::max);
    let lo = scaled_sup.iter().copied().fold(f64::INFINITY, f64::min);
    let vanishing = hi <= 1e-12;
    let spread = if vanishing { 1.0 } else { hi / lo };
    let bounded = vanishing || scaled_sup.iter().all(|&s| s <= 2.0 * k_fit);
    Ok(ResidualTable { probe, rows, scaled_sup, k_fit, spread, max_closed_form_gap: max_gap, skipped_u, bounded })
}
