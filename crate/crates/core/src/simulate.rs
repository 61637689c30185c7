//! Event-driven simulation of the switched pre-limit process, its averaged
//! limit, and the predictable characteristics along a path.
//!
//! The pre-limit process is pure jump. At the accelerated clock three
//! exponential clocks compete in switch state `x`:
//!
//! * switching at rate `q(x) / eps`;
//! * small jumps `eps d(xi; x)` at rate `rho(x) / eps`;
//! * big jumps at rate `Gamma(xi, R^d; x)`, realised by thinning a Poisson
//!   stream of rate `sup_u Gamma(u, R^d; x)`, which is finite because every
//!   rate saturates.
//!
//! A single exponential draw against the total rate selects the next clock,
//! so two events never share a time. Should two times compare equal in
//! floating point anyway, the switch is processed first.
//!
//! The limit process follows the flow drift between jumps (classical RK4 with
//! a fixed step) and jumps from the averaged kernel, again by thinning.

use rand::Rng;
use serde::Serialize;

use crate::averaging::{CompoundPoisson, LimitModel};
use crate::error::{Error, Result};
use crate::jump_model::{JumpModel, PrelimitKernel};
use crate::probe::norm;
use crate::switching::{build_generator, exp_sample, SwitchSpec};

/// Default cap on the number of clock firings per path.
pub const DEFAULT_MAX_EVENTS: u64 = 100_000_000;
/// Largest change of `xi(T)` tolerated when the ODE step is halved.
pub const STEP_HALVING_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Switch,
    SmallJump,
    BigJump,
    FlowSample,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Switch => "switch",
            EventKind::SmallJump => "small-jump",
            EventKind::BigJump => "big-jump",
            EventKind::FlowSample => "flow-sample",
        }
    }

    pub fn is_jump(&self) -> bool {
        matches!(self, EventKind::SmallJump | EventKind::BigJump)
    }
}

/// Event record of one path on `[0, horizon]`.
///
/// `xi` is stored flat: the value after event `i` occupies
/// `xi[i * dim .. (i + 1) * dim]`. `eps == 0` marks limit trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dim: usize,
    pub eps: f64,
    pub horizon: f64,
    pub xi0: Vec<f64>,
    pub x0: usize,
    pub times: Vec<f64>,
    pub kinds: Vec<EventKind>,
    pub xi: Vec<f64>,
    pub states: Vec<usize>,
    /// Thinning candidates that were rejected.
    pub rejected: u64,
}

impl Trajectory {
    fn new(dim: usize, eps: f64, horizon: f64, xi0: &[f64], x0: usize) -> Self {
        Self {
            dim,
            eps,
            horizon,
            xi0: xi0.to_vec(),
            x0,
            times: Vec::new(),
            kinds: Vec::new(),
            xi: Vec::new(),
            states: Vec::new(),
            rejected: 0,
        }
    }

    fn push(&mut self, t: f64, kind: EventKind, xi: &[f64], x: usize) {
        self.times.push(t);
        self.kinds.push(kind);
        self.xi.extend_from_slice(xi);
        self.states.push(x);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn xi_at_event(&self, i: usize) -> &[f64] {
        &self.xi[i * self.dim..(i + 1) * self.dim]
    }

    /// Number of events of a kind.
    pub fn count(&self, kind: EventKind) -> usize {
        self.kinds.iter().filter(|&&k| k == kind).count()
    }

    /// `(xi(t), x(t))`, right-continuous. For limit trajectories this is
    /// exact at recorded times and piecewise constant in between.
    pub fn value_at(&self, t: f64) -> (&[f64], usize) {
        let idx = self.times.partition_point(|&s| s <= t);
        if idx == 0 {
            (&self.xi0, self.x0)
        } else {
            (self.xi_at_event(idx - 1), self.states[idx - 1])
        }
    }

    pub fn terminal(&self) -> &[f64] {
        self.value_at(self.horizon).0
    }

    /// `sup_t |xi(t)|` over recorded values.
    pub fn sup_norm(&self) -> f64 {
        let mut m = norm(&self.xi0);
        for i in 0..self.len() {
            m = m.max(norm(self.xi_at_event(i)));
        }
        m
    }

    /// CSV with columns `t, kind, xi_0..xi_{d-1}, state`; the first row is the
    /// initial condition with kind `start`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        Self::write_csv_header(&mut w, self.dim, false)?;
        self.write_csv_records(&mut w, None)
    }

    /// Header of [`Trajectory::write_csv`], optionally led by a `path` column
    /// for files holding several paths.
    pub fn write_csv_header<W: std::io::Write>(mut w: W, dim: usize, with_path: bool) -> std::io::Result<()> {
        if with_path {
            write!(w, "path,")?;
        }
        write!(w, "t,kind")?;
        for i in 0..dim {
            write!(w, ",xi_{i}")?;
        }
        writeln!(w, ",state")
    }

    pub fn write_csv_records<W: std::io::Write>(&self, mut w: W, path: Option<usize>) -> std::io::Result<()> {
        let lead = path.map(|p| format!("{p},")).unwrap_or_default();
        write!(w, "{lead}0,start")?;
        for v in &self.xi0 {
            write!(w, ",{v}")?;
        }
        writeln!(w, ",{}", self.x0)?;
        for i in 0..self.len() {
            write!(w, "{lead}{},{}", self.times[i], self.kinds[i].as_str())?;
            for v in self.xi_at_event(i) {
                write!(w, ",{v}")?;
            }
            writeln!(w, ",{}", self.states[i])?;
        }
        Ok(())
    }
}

fn check_common(horizon: f64, xi0: &[f64], dim: usize) -> Result<()> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Argument(format!("horizon T = {horizon} must be finite and > 0")));
    }
    if xi0.len() != dim {
        return Err(Error::Dimension { expected: dim, got: xi0.len() });
    }
    Ok(())
}

/// Reusable pre-limit sampler for one `(spec, model, eps, T)`.
#[derive(Debug, Clone)]
pub struct PrelimitSimulator<'a> {
    spec: &'a SwitchSpec,
    kernel: PrelimitKernel<'a>,
    horizon: f64,
    big_bounds: Vec<f64>,
    max_events: u64,
}

impl<'a> PrelimitSimulator<'a> {
    pub fn new(spec: &'a SwitchSpec, model: &'a JumpModel, eps: f64, horizon: f64) -> Result<Self> {
        if spec.len() != model.n_states() {
            return Err(Error::Dimension { expected: spec.len(), got: model.n_states() });
        }
        build_generator(spec)?;
        let kernel = PrelimitKernel::new(model, eps)?;
        check_common(horizon, &vec![0.0; model.dim()], model.dim())?;
        let big_bounds = (0..model.n_states()).map(|x| model.rate_bound(x)).collect();
        Ok(Self { spec, kernel, horizon, big_bounds, max_events: DEFAULT_MAX_EVENTS })
    }

    pub fn with_max_events(mut self, max_events: u64) -> Self {
        self.max_events = max_events;
        self
    }

    pub fn eps(&self) -> f64 {
        self.kernel.eps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn run<R: Rng + ?Sized>(&self, xi0: &[f64], x0: usize, rng: &mut R) -> Result<Trajectory> {
        let model = self.kernel.model;
        let eps = self.kernel.eps;
        let dim = model.dim();
        check_common(self.horizon, xi0, dim)?;
        if x0 >= self.spec.len() {
            return Err(Error::Argument(format!("initial state {x0} out of range")));
        }
        let mut traj = Trajectory::new(dim, eps, self.horizon, xi0, x0);
        let mut xi = xi0.to_vec();
        let mut step = vec![0.0; dim];
        let mut x = x0;
        let mut t = 0.0;
        let mut fired: u64 = 0;
        loop {
            let r_switch = self.spec.q()[x] / eps;
            let r_small = model.state(x).rho / eps;
            let r_big = self.big_bounds[x];
            let total = r_switch + r_small + r_big;
            if total <= 0.0 {
                break;
            }
            t += exp_sample(total, rng);
            if t > self.horizon {
                break;
            }
            fired += 1;
            if fired > self.max_events {
                return Err(Error::EventOverflow { limit: self.max_events, horizon: self.horizon });
            }
            let pick = rng.random::<f64>() * total;
            if pick < r_switch {
                x = self.spec.next_state(x, rng);
                traj.push(t, EventKind::Switch, &xi, x);
            } else if pick < r_switch + r_small {
                model.state(x).displacement.eval_into(&xi, &mut step);
                xi.iter_mut().zip(&step).for_each(|(v, d)| *v += eps * d);
                traj.push(t, EventKind::SmallJump, &xi, x);
            } else {
                let lam = model.total_rate(&xi, x);
                if rng.random::<f64>() * r_big < lam {
                    model.sample_jump(&xi, x, lam, rng, &mut step);
                    xi.iter_mut().zip(&step).for_each(|(v, d)| *v += d);
                    traj.push(t, EventKind::BigJump, &xi, x);
                } else {
                    traj.rejected += 1;
                }
            }
        }
        Ok(traj)
    }
}

/// One pre-limit path of `(xi_eps(t), x(t / eps))` on `[0, T]`.
pub fn simulate_prelimit<R: Rng + ?Sized>(
    spec: &SwitchSpec,
    model: &JumpModel,
    eps: f64,
    horizon: f64,
    xi0: &[f64],
    x0: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    PrelimitSimulator::new(spec, model, eps, horizon)?.run(xi0, x0, rng)
}

fn rk4_step(limit: &LimitModel, y: &mut [f64], dt: f64, k: &mut [Vec<f64>; 5]) {
    let [k1, k2, k3, k4, tmp] = k;
    limit.flow_drift_into(y, k1);
    for i in 0..y.len() {
        tmp[i] = y[i] + 0.5 * dt * k1[i];
    }
    limit.flow_drift_into(tmp, k2);
    for i in 0..y.len() {
        tmp[i] = y[i] + 0.5 * dt * k2[i];
    }
    limit.flow_drift_into(tmp, k3);
    for i in 0..y.len() {
        tmp[i] = y[i] + dt * k3[i];
    }
    limit.flow_drift_into(tmp, k4);
    for i in 0..y.len() {
        y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

fn scratch(dim: usize) -> [Vec<f64>; 5] {
    std::array::from_fn(|_| vec![0.0; dim])
}

/// Jump-free flow from `xi0` over `[0, horizon]` with fixed step `h`.
pub fn integrate_flow(limit: &LimitModel, xi0: &[f64], horizon: f64, h: f64) -> Vec<f64> {
    let mut y = xi0.to_vec();
    let mut k = scratch(y.len());
    let n = (horizon / h).round().max(1.0) as usize;
    let dt = horizon / n as f64;
    for _ in 0..n {
        rk4_step(limit, &mut y, dt, &mut k);
    }
    y
}

/// Reusable limit-process sampler. Construction validates the step size.
#[derive(Debug, Clone)]
pub struct LimitSimulator<'a> {
    limit: &'a LimitModel,
    horizon: f64,
    step: f64,
    /// Flow-sample times in `(0, horizon]`, ascending.
    stops: Vec<f64>,
    bound: f64,
    max_events: u64,
}

impl<'a> LimitSimulator<'a> {
    /// `observe` lists extra times at which `xi` is recorded exactly. The
    /// step-halving probe runs from `probe_xi0`.
    pub fn new(limit: &'a LimitModel, horizon: f64, step: f64, observe: &[f64], probe_xi0: &[f64]) -> Result<Self> {
        check_common(horizon, probe_xi0, limit.dim())?;
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::Argument(format!("ODE step h = {step} must be > 0")));
        }
        if limit.has_flow() {
            let coarse = integrate_flow(limit, probe_xi0, horizon, step);
            let fine = integrate_flow(limit, probe_xi0, horizon, 0.5 * step);
            let change = coarse.iter().zip(&fine).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            if change > STEP_HALVING_TOL {
                return Err(Error::StepRejected { step, change, tolerance: STEP_HALVING_TOL });
            }
        }
        let n = (horizon / step).floor() as usize;
        let mut stops: Vec<f64> = (1..=n).map(|k| k as f64 * step).filter(|&t| t <= horizon).collect();
        for &t in observe {
            if !(t >= 0.0 && t <= horizon) {
                return Err(Error::GridOutsideHorizon { time: t, horizon });
            }
            if t > 0.0 {
                stops.push(t);
            }
        }
        stops.push(horizon);
        stops.sort_by(f64::total_cmp);
        let tol = 1e-12 * horizon;
        stops.dedup_by(|a, b| (*a - *b).abs() <= tol);
        Ok(Self { limit, horizon, step, stops, bound: limit.rate_bound(), max_events: DEFAULT_MAX_EVENTS })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn run<R: Rng + ?Sized>(&self, xi0: &[f64], rng: &mut R) -> Result<Trajectory> {
        let limit = self.limit;
        let dim = limit.dim();
        check_common(self.horizon, xi0, dim)?;
        let flow = limit.has_flow();
        let mut traj = Trajectory::new(dim, 0.0, self.horizon, xi0, 0);
        let mut xi = xi0.to_vec();
        let mut jump = vec![0.0; dim];
        let mut k = scratch(dim);
        let mut t = 0.0;
        let mut next_stop = 0;
        let mut fired: u64 = 0;
        loop {
            let candidate = if self.bound > 0.0 { t + exp_sample(self.bound, rng) } else { f64::INFINITY };
            let target = candidate.min(self.horizon);
            while next_stop < self.stops.len() && self.stops[next_stop] <= target {
                let s = self.stops[next_stop];
                if flow {
                    rk4_step(limit, &mut xi, s - t, &mut k);
                }
                t = s;
                traj.push(t, EventKind::FlowSample, &xi, 0);
                next_stop += 1;
            }
            if candidate >= self.horizon {
                break;
            }
            if flow && candidate > t {
                rk4_step(limit, &mut xi, candidate - t, &mut k);
            }
            t = candidate;
            fired += 1;
            if fired > self.max_events {
                return Err(Error::EventOverflow { limit: self.max_events, horizon: self.horizon });
            }
            let lam = limit.total_rate(&xi);
            if rng.random::<f64>() * self.bound < lam {
                if flow {
                    traj.push(t, EventKind::FlowSample, &xi, 0);
                }
                limit.model().sample_jump(&xi, 0, lam, rng, &mut jump);
                xi.iter_mut().zip(&jump).for_each(|(v, d)| *v += d);
                traj.push(t, EventKind::BigJump, &xi, 0);
            } else {
                traj.rejected += 1;
            }
        }
        Ok(traj)
    }
}

/// One path of the limit process: flow with drift `b_avg0` between jumps,
/// jumps from the averaged kernel.
pub fn simulate_limit<R: Rng + ?Sized>(
    limit: &LimitModel,
    horizon: f64,
    xi0: &[f64],
    rng: &mut R,
    step: f64,
) -> Result<Trajectory> {
    LimitSimulator::new(limit, horizon, step, &[], xi0)?.run(xi0, rng)
}

/// `xi(t) = xi0 + sum_{k <= N(t)} alpha_k` with `N` Poisson of rate
/// `Lambda` and i.i.d. jumps from the normalised law.
pub fn simulate_compound_poisson<R: Rng + ?Sized>(
    law: &CompoundPoisson,
    horizon: f64,
    xi0: &[f64],
    rng: &mut R,
) -> Result<Trajectory> {
    let dim = xi0.len();
    check_common(horizon, xi0, dim)?;
    if law.components.iter().any(|(_, f)| f.dim() != dim) {
        return Err(Error::Dimension { expected: dim, got: law.components[0].1.dim() });
    }
    let lambda = law.rate();
    let mut traj = Trajectory::new(dim, 0.0, horizon, xi0, 0);
    if lambda <= 0.0 {
        return Ok(traj);
    }
    let mut xi = xi0.to_vec();
    let mut jump = vec![0.0; dim];
    let mut t = 0.0;
    loop {
        t += exp_sample(lambda, rng);
        if t > horizon {
            break;
        }
        let target = rng.random::<f64>() * lambda;
        let mut acc = 0.0;
        let mut chosen = &law.components[0].1;
        for (r, f) in &law.components {
            if *r > 0.0 {
                acc += r;
                chosen = f;
                if target < acc {
                    break;
                }
            }
        }
        chosen.sample_into(rng, &mut jump);
        xi.iter_mut().zip(&jump).for_each(|(v, d)| *v += d);
        traj.push(t, EventKind::BigJump, &xi, 0);
    }
    Ok(traj)
}

/// `B(t)`, `C(t)` and `Gamma_g(t)` (catalogue probes) on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CharacteristicPaths {
    pub dim: usize,
    pub times: Vec<f64>,
    /// `B(t)` per grid time, length `dim`.
    pub b: Vec<Vec<f64>>,
    /// `C(t)` per grid time, row-major `dim x dim`.
    pub c: Vec<Vec<f64>>,
    /// `Gamma_g(t)` per grid time for the three catalogue probes.
    pub gamma_g: Vec<[f64; 3]>,
}

impl CharacteristicPaths {
    /// CSV with columns `t, B, C, Gamma_g1, Gamma_g2, Gamma_g3` (one column
    /// per coordinate or matrix entry when `d > 1`).
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        Self::write_csv_header(&mut w, self.dim, false)?;
        self.write_csv_records(&mut w, None)
    }

    pub fn write_csv_header<W: std::io::Write>(mut w: W, dim: usize, with_path: bool) -> std::io::Result<()> {
        if with_path {
            write!(w, "path,")?;
        }
        write!(w, "t")?;
        if dim == 1 {
            write!(w, ",B,C")?;
        } else {
            for i in 0..dim {
                write!(w, ",B_{i}")?;
            }
            for i in 0..dim {
                for j in 0..dim {
                    write!(w, ",C_{i}_{j}")?;
                }
            }
        }
        writeln!(w, ",Gamma_g1,Gamma_g2,Gamma_g3")
    }

    pub fn write_csv_records<W: std::io::Write>(&self, mut w: W, path: Option<usize>) -> std::io::Result<()> {
        for k in 0..self.times.len() {
            if let Some(p) = path {
                write!(w, "{p},")?;
            }
            write!(w, "{}", self.times[k])?;
            for v in self.b[k].iter().chain(&self.c[k]) {
                write!(w, ",{v}")?;
            }
            for v in &self.gamma_g[k] {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

struct Integrands {
    b: Vec<f64>,
    c: Vec<f64>,
    g: [f64; 3],
}

fn integrands(model: &JumpModel, u: &[f64], x: usize) -> Result<Integrands> {
    let mut b = vec![0.0; model.dim()];
    model.drift_into(u, x, &mut b);
    Ok(Integrands { b, c: model.kernel_second_moment(u, x), g: model.catalogue_g_moments(u, x)? })
}

/// Integrates `b`, `c` and `Gamma_g` along a trajectory.
///
/// Between records of a pre-limit (pure-jump) path the integrands are
/// constant, so the integration is exact. For limit paths the segment ending
/// in a flow sample is integrated by the trapezoid rule.
///
/// `model` must be the model the path was simulated from; for limit paths
/// that is [`LimitModel::model`].
pub fn predictable_characteristics(traj: &Trajectory, model: &JumpModel, grid: &[f64]) -> Result<CharacteristicPaths> {
    if model.dim() != traj.dim {
        return Err(Error::Dimension { expected: traj.dim, got: model.dim() });
    }
    for &t in grid {
        if !(t >= 0.0 && t <= traj.horizon) {
            return Err(Error::GridOutsideHorizon { time: t, horizon: traj.horizon });
        }
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Argument("characteristic grid must be non-decreasing".into()));
    }
    let dim = traj.dim;
    let mut acc_b = vec![0.0; dim];
    let mut acc_c = vec![0.0; dim * dim];
    let mut acc_g = [0.0; 3];
    let mut out = CharacteristicPaths {
        dim,
        times: grid.to_vec(),
        b: Vec::with_capacity(grid.len()),
        c: Vec::with_capacity(grid.len()),
        gamma_g: Vec::with_capacity(grid.len()),
    };
    let mut gi = 0;
    let mut start_t = 0.0;
    let mut start = integrands(model, &traj.xi0, traj.x0)?;
    let limit_path = traj.eps == 0.0;
    for i in 0..=traj.len() {
        let (end_t, end_kind) = if i < traj.len() {
            (traj.times[i], Some(traj.kinds[i]))
        } else {
            (traj.horizon, None)
        };
        let end = if i < traj.len() {
            Some(integrands(model, traj.xi_at_event(i), traj.states[i])?)
        } else {
            None
        };
        // integrand at the right end of the segment, before any jump
        let trapezoid = limit_path && end_kind == Some(EventKind::FlowSample);
        let seg = end_t - start_t;
        let partial = |a: f64, b: f64, s: f64| -> f64 {
            if trapezoid && seg > 0.0 {
                a * s + 0.5 * (b - a) * s * s / seg
            } else {
                a * s
            }
        };
        while gi < grid.len() && grid[gi] <= end_t {
            let s = grid[gi] - start_t;
            let right = end.as_ref().unwrap_or(&start);
            out.b.push(acc_b.iter().enumerate().map(|(k, v)| v + partial(start.b[k], right.b[k], s)).collect());
            out.c.push(acc_c.iter().enumerate().map(|(k, v)| v + partial(start.c[k], right.c[k], s)).collect());
            out.gamma_g.push(std::array::from_fn(|k| acc_g[k] + partial(start.g[k], right.g[k], s)));
            gi += 1;
        }
        let right = end.as_ref().unwrap_or(&start);
        for k in 0..dim {
            acc_b[k] += partial(start.b[k], right.b[k], seg);
        }
        for k in 0..dim * dim {
            acc_c[k] += partial(start.c[k], right.c[k], seg);
        }
        for k in 0..3 {
            acc_g[k] += partial(start.g[k], right.g[k], seg);
        }
        if let Some(e) = end {
            start = e;
            start_t = end_t;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::averaging::assemble_limit;
    use crate::jump_model::{Displacement, JumpComponent, JumpFamily, StateDynamics};
    use crate::rng::path_rng;
    use crate::switching::{build_generator, stationary_distribution};
    use approx::assert_abs_diff_eq;

    fn single(components: Vec<JumpComponent>, rho: f64, d: Displacement) -> JumpModel {
        JumpModel::new(1, vec![StateDynamics { components, rho, displacement: d }]).unwrap()
    }

    fn frozen_spec(n: usize) -> SwitchSpec {
        let p = (0..n).map(|i| (0..n).map(|j| if (i + 1) % n == j { 1.0 } else { 0.0 }).collect()).collect();
        SwitchSpec::new((0..n).map(|i| i.to_string()).collect(), vec![1.0; n], p).unwrap()
    }

    #[test]
    fn no_jump_clocks_leave_xi_fixed() {
        let spec = frozen_spec(2);
        let model = JumpModel::new(
            1,
            vec![
                StateDynamics { components: vec![], rho: 0.0, displacement: Displacement::zero(1) },
                StateDynamics { components: vec![], rho: 0.0, displacement: Displacement::zero(1) },
            ],
        )
        .unwrap();
        let tr = simulate_prelimit(&spec, &model, 0.1, 1.0, &[0.7], 0, &mut path_rng(1, 0, 0)).unwrap();
        assert!(tr.count(EventKind::Switch) > 0);
        assert_eq!(tr.count(EventKind::Switch), tr.len());
        assert!(tr.xi.iter().all(|&v| v == 0.7));
    }

    #[test]
    fn event_overflow_is_reported() {
        let model = single(vec![], 1.0, Displacement::constant(vec![1.0]));
        let spec = SwitchSpec::trivial();
        let sim = PrelimitSimulator::new(&spec, &model, 0.001, 1.0).unwrap().with_max_events(10);
        assert!(matches!(sim.run(&[0.0], 0, &mut path_rng(0, 0, 0)), Err(Error::EventOverflow { .. })));
    }

    #[test]
    fn prelimit_is_deterministic() {
        let spec = frozen_spec(2);
        let c = JumpComponent::new(JumpFamily::Gauss { mean: vec![0.0], sd: vec![1.0] }, 1.0).with_growth(1.0, 1.0);
        let st = StateDynamics { components: vec![c], rho: 1.0, displacement: Displacement::constant(vec![0.5]) };
        let model = JumpModel::new(1, vec![st.clone(), st]).unwrap();
        let a = simulate_prelimit(&spec, &model, 0.05, 1.0, &[0.0], 0, &mut path_rng(9, 1, 2)).unwrap();
        let b = simulate_prelimit(&spec, &model, 0.05, 1.0, &[0.0], 0, &mut path_rng(9, 1, 2)).unwrap();
        assert_eq!(a, b);
        assert!(a.times.windows(2).all(|w| w[0] < w[1]));
    }

    fn limit_of(model: &JumpModel) -> LimitModel {
        let spec = SwitchSpec::trivial();
        let pi = stationary_distribution(&build_generator(&spec).unwrap()).unwrap();
        assemble_limit(model, &pi).unwrap()
    }

    #[test]
    fn constant_flow() {
        let limit = limit_of(&single(vec![], 1.0, Displacement::constant(vec![0.75])));
        let tr = simulate_limit(&limit, 2.0, &[1.0], &mut path_rng(0, 0, 0), 1e-2).unwrap();
        assert_abs_diff_eq!(tr.terminal()[0], 1.0 + 1.5, epsilon = 1e-12);
        assert_eq!(*tr.times.last().unwrap(), 2.0);
    }

    #[test]
    fn exponential_decay_flow() {
        let limit = limit_of(&single(vec![], 1.0, Displacement::zero(1).with_ramp(vec![-1.0], 1e6)));
        let tr = simulate_limit(&limit, 1.0, &[1.0], &mut path_rng(0, 0, 0), 1e-3).unwrap();
        assert_abs_diff_eq!(tr.terminal()[0], (-1.0f64).exp(), epsilon = 1e-6);
    }

    #[test]
    fn rk4_order() {
        let limit = limit_of(&single(vec![], 1.0, Displacement::zero(1).with_ramp(vec![-1.0], 1e6)));
        let exact = (-1.0f64).exp();
        let e1 = (integrate_flow(&limit, &[1.0], 1.0, 0.1)[0] - exact).abs();
        let e2 = (integrate_flow(&limit, &[1.0], 1.0, 0.05)[0] - exact).abs();
        assert!(e1 / e2 >= 8.0, "ratio {}", e1 / e2);
    }

    #[test]
    fn coarse_step_is_rejected() {
        let limit = limit_of(&single(vec![], 1.0, Displacement::zero(1).with_ramp(vec![-3.0], 1e6)));
        assert!(matches!(
            simulate_limit(&limit, 1.0, &[1.0], &mut path_rng(0, 0, 0), 0.25),
            Err(Error::StepRejected { .. })
        ));
    }

    #[test]
    fn compound_poisson_degenerate() {
        let cp = CompoundPoisson::new(vec![]).unwrap();
        let tr = simulate_compound_poisson(&cp, 3.0, &[2.0], &mut path_rng(0, 0, 0)).unwrap();
        assert!(tr.is_empty());
        assert_eq!(tr.terminal(), &[2.0]);
    }

    #[test]
    fn compound_poisson_gaussian_moments() {
        let cp = CompoundPoisson::new(vec![(1.0, JumpFamily::Gauss { mean: vec![0.0], sd: vec![1.0] })]).unwrap();
        let n = 20_000;
        let xs: Vec<f64> = (0..n)
            .map(|i| simulate_compound_poisson(&cp, 2.0, &[0.0], &mut path_rng(3, 0, i)).unwrap().terminal()[0])
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // Var = Lambda T E[a^2] = 2; Var of the sample variance uses E[X^4] = 3*2 + 3*4 = 18 for Lambda T = 2
        assert!((mean / (2.0f64 / n as f64).sqrt()).abs() < 3.0, "mean {mean}");
        let se_var = ((18.0 - 4.0) / n as f64).sqrt();
        assert!((var - 2.0).abs() < 3.0 * se_var, "var {var}");
    }

    #[test]
    fn characteristics_examples() {
        // b = 1 everywhere
        let model = single(vec![], 1.0, Displacement::constant(vec![1.0]));
        let tr = simulate_prelimit(&SwitchSpec::trivial(), &model, 0.1, 2.0, &[0.0], 0, &mut path_rng(0, 0, 0)).unwrap();
        let cp = predictable_characteristics(&tr, &model, &[0.0, 0.5, 1.3, 2.0]).unwrap();
        for (t, b) in cp.times.iter().zip(&cp.b) {
            assert_abs_diff_eq!(b[0], *t, epsilon = 1e-12);
        }
        // point mass v0 = 2, rate 1, g = min(|v|^3, 1): Gamma_g(t) = t
        let model = single(vec![JumpComponent::new(JumpFamily::Point { value: vec![2.0] }, 1.0)], 0.0, Displacement::zero(1));
        let tr = simulate_prelimit(&SwitchSpec::trivial(), &model, 0.1, 3.0, &[0.0], 0, &mut path_rng(0, 0, 1)).unwrap();
        let cp = predictable_characteristics(&tr, &model, &[1.0, 3.0]).unwrap();
        assert_abs_diff_eq!(cp.gamma_g[0][0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cp.gamma_g[1][0], 3.0, epsilon = 1e-12);
        assert!(matches!(
            predictable_characteristics(&tr, &model, &[3.5]),
            Err(Error::GridOutsideHorizon { .. })
        ));
    }

    #[test]
    fn limit_characteristics_follow_flow() {
        // b_avg(u) = -u, no jumps: B(T) = xi(T) - xi0 exactly in the limit
        let limit = limit_of(&single(vec![], 1.0, Displacement::zero(1).with_ramp(vec![-1.0], 1e6)));
        let tr = simulate_limit(&limit, 1.0, &[1.0], &mut path_rng(0, 0, 0), 1e-3).unwrap();
        let cp = predictable_characteristics(&tr, limit.model(), &[1.0]).unwrap();
        assert_abs_diff_eq!(cp.b[0][0], (-1.0f64).exp() - 1.0, epsilon = 1e-6);
    }

    #[test]
    fn csv_layout() {
        let model = single(vec![JumpComponent::new(JumpFamily::Point { value: vec![1.0] }, 2.0)], 0.0, Displacement::zero(1));
        let tr = simulate_prelimit(&SwitchSpec::trivial(), &model, 0.5, 1.0, &[0.0], 0, &mut path_rng(0, 0, 0)).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,kind,xi_0,state\n0,start,0,0\n"));
        let cp = predictable_characteristics(&tr, &model, &[0.0, 1.0]).unwrap();
        let mut buf = Vec::new();
        cp.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,B,C,Gamma_g1,Gamma_g2,Gamma_g3\n"));
    }
}
