//! Monte Carlo comparison of pre-limit ensembles with the averaged limit.
//!
//! Weak convergence is probed through finite-dimensional marginals (the
//! terminal value and three interior times), the terminal values of the
//! predictable characteristics, and two compactness estimands: the tail of
//! `sup_t |xi(t)|` and the increment modulus `E|xi(t) - xi(s)|^2 / |t - s|` on
//! a dyadic grid. Path-space distances are out of scope.
//!
//! Standard errors of the distances come from a nonparametric bootstrap.
//! Reports contain no timings, so a fixed seed gives a byte-identical report.

use serde::{Deserialize, Serialize};

use crate::averaging::{assemble_limit, LimitModel};
use crate::ensemble::try_run_paths;
use crate::error::{Error, Result};
use crate::jump_model::JumpModel;
use crate::metrics::{bootstrap_se, ks_statistic, mean, quantile, tail, variance, wasserstein1};
use crate::rng::{eps_domain, path_rng, LIMIT_DOMAIN};
use crate::simulate::{
    predictable_characteristics, simulate_compound_poisson, LimitSimulator, PrelimitSimulator, Trajectory,
};
use crate::switching::{build_generator, stationary_distribution, SwitchSpec};

pub const MIN_PATHS: usize = 100;
/// The dyadic grid has `2^DYADIC_LEVEL` intervals.
pub const DYADIC_LEVEL: u32 = 4;
/// Limit-sample quantiles of `sup |xi|` used as the default tail grid.
pub const CCC_QUANTILES: [f64; 6] = [0.5, 0.75, 0.9, 0.95, 0.99, 0.999];
/// `max / min` bound for the epsilon-uniformity checks.
pub const UNIFORMITY_FACTOR: f64 = 2.0;

/// Thresholds and knobs of a convergence study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyOptions {
    /// Increases of W1 tolerated along the descending epsilon list.
    pub inversions_allowed: usize,
    /// An increase must stay within this many combined bootstrap SE.
    pub se_multiplier: f64,
    /// KS level at the smallest epsilon.
    pub ks_level: f64,
    pub bootstrap_resamples: usize,
    /// ODE step of the limit flow; `None` means `1e-3 T`.
    pub ode_step: Option<f64>,
    /// Tail grid; `None` means limit quantiles [`CCC_QUANTILES`].
    pub c_grid: Option<Vec<f64>>,
    /// Initial position; `None` means the origin.
    pub xi0: Option<Vec<f64>>,
    /// Initial switch state.
    pub x0: usize,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            inversions_allowed: 1,
            se_multiplier: 2.0,
            ks_level: 0.01,
            bootstrap_resamples: crate::metrics::BOOTSTRAP_RESAMPLES,
            ode_step: None,
            c_grid: None,
            xi0: None,
            x0: 0,
        }
    }
}

/// Per-path quantities of one ensemble. `eps == 0` marks the limit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub eps: f64,
    pub n_paths: usize,
    pub dim: usize,
    pub horizon: f64,
    /// `k T / 2^DYADIC_LEVEL`, `k = 0..=2^DYADIC_LEVEL`.
    pub grid: Vec<f64>,
    /// `grid_values[k][c][path]`.
    pub grid_values: Vec<Vec<Vec<f64>>>,
    /// `sup_t |xi(t)|` per path.
    pub sup: Vec<f64>,
    /// `B(T)` per coordinate and path.
    pub b_terminal: Vec<Vec<f64>>,
    /// `trace C(T)` per path.
    pub c_terminal: Vec<f64>,
    /// `Gamma_g(T)` for the catalogue probes, per probe and path.
    pub gamma_terminal: Vec<Vec<f64>>,
    /// Rejected thinning candidates over all paths.
    pub rejected: u64,
    pub events: u64,
}

impl EnsembleSummary {
    pub fn terminal(&self, coord: usize) -> &[f64] {
        &self.grid_values[self.grid.len() - 1][coord]
    }

    pub fn at_grid(&self, k: usize, coord: usize) -> &[f64] {
        &self.grid_values[k][coord]
    }

    /// `E sup_t |xi(t)|^2`.
    pub fn sup_second_moment(&self) -> f64 {
        self.sup.iter().map(|s| s * s).sum::<f64>() / self.n_paths as f64
    }

    /// CSV of per-path samples: `path, xi_T_*, sup, B_T_*, C_T, Gamma_T_*`.
    pub fn write_samples_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "path")?;
        for c in 0..self.dim {
            write!(w, ",xi_T_{c}")?;
        }
        write!(w, ",sup")?;
        for c in 0..self.dim {
            write!(w, ",B_T_{c}")?;
        }
        writeln!(w, ",C_T,Gamma_T_g1,Gamma_T_g2,Gamma_T_g3")?;
        for p in 0..self.n_paths {
            write!(w, "{p}")?;
            for c in 0..self.dim {
                write!(w, ",{}", self.terminal(c)[p])?;
            }
            write!(w, ",{}", self.sup[p])?;
            for c in 0..self.dim {
                write!(w, ",{}", self.b_terminal[c][p])?;
            }
            write!(w, ",{}", self.c_terminal[p])?;
            for g in &self.gamma_terminal {
                write!(w, ",{}", g[p])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

struct PathOutcome {
    grid: Vec<f64>,
    sup: f64,
    b: Vec<f64>,
    c: f64,
    g: [f64; 3],
    rejected: u64,
    events: u64,
}

fn dyadic_grid(horizon: f64) -> Vec<f64> {
    let n = 1usize << DYADIC_LEVEL;
    (0..=n).map(|k| if k == n { horizon } else { horizon * k as f64 / n as f64 }).collect()
}

fn outcome(traj: &Trajectory, model: &JumpModel, grid: &[f64]) -> Result<PathOutcome> {
    let dim = traj.dim;
    let mut values = Vec::with_capacity(grid.len() * dim);
    for &t in grid {
        values.extend_from_slice(traj.value_at(t).0);
    }
    let ch = predictable_characteristics(traj, model, &[traj.horizon])?;
    let c = (0..dim).map(|i| ch.c[0][i * dim + i]).sum();
    Ok(PathOutcome {
        grid: values,
        sup: traj.sup_norm(),
        b: ch.b[0].clone(),
        c,
        g: ch.gamma_g[0],
        rejected: traj.rejected,
        events: traj.len() as u64,
    })
}

fn summarise(eps: f64, dim: usize, horizon: f64, grid: Vec<f64>, paths: Vec<PathOutcome>) -> EnsembleSummary {
    let n = paths.len();
    let grid_values = (0..grid.len())
        .map(|k| (0..dim).map(|c| paths.iter().map(|p| p.grid[k * dim + c]).collect()).collect())
        .collect();
    EnsembleSummary {
        eps,
        n_paths: n,
        dim,
        horizon,
        grid,
        grid_values,
        sup: paths.iter().map(|p| p.sup).collect(),
        b_terminal: (0..dim).map(|c| paths.iter().map(|p| p.b[c]).collect()).collect(),
        c_terminal: paths.iter().map(|p| p.c).collect(),
        gamma_terminal: (0..3).map(|k| paths.iter().map(|p| p.g[k]).collect()).collect(),
        rejected: paths.iter().map(|p| p.rejected).sum(),
        events: paths.iter().map(|p| p.events).sum(),
    }
}

fn check_n(n: usize) -> Result<()> {
    if n < MIN_PATHS {
        return Err(Error::Argument(format!("N = {n} paths is below the minimum of {MIN_PATHS}")));
    }
    Ok(())
}

/// `N` pre-limit paths at one `eps`, streams `(seed, eps_domain(eps_index), path)`.
#[allow(clippy::too_many_arguments)]
pub fn prelimit_ensemble(
    spec: &SwitchSpec,
    model: &JumpModel,
    eps: f64,
    eps_index: usize,
    horizon: f64,
    n: usize,
    seed: u64,
    xi0: &[f64],
    x0: usize,
) -> Result<EnsembleSummary> {
    let sim = PrelimitSimulator::new(spec, model, eps, horizon)?;
    let grid = dyadic_grid(horizon);
    let domain = eps_domain(eps_index);
    let paths = try_run_paths(n, |p| {
        let traj = sim.run(xi0, x0, &mut path_rng(seed, domain, p as u64))?;
        outcome(&traj, model, &grid)
    })?;
    Ok(summarise(eps, model.dim(), horizon, grid, paths))
}

/// `N` limit paths, streams `(seed, LIMIT_DOMAIN, path)`. Uses exact
/// compound-Poisson sampling when the limit has no flow and constant rates.
pub fn limit_ensemble(
    limit: &LimitModel,
    horizon: f64,
    n: usize,
    seed: u64,
    xi0: &[f64],
    step: Option<f64>,
) -> Result<EnsembleSummary> {
    let grid = dyadic_grid(horizon);
    let step = step.unwrap_or(1e-3 * horizon);
    let model = limit.model();
    let paths = if let Some(cp) = limit.compound_poisson() {
        try_run_paths(n, |p| {
            let traj = simulate_compound_poisson(&cp, horizon, xi0, &mut path_rng(seed, LIMIT_DOMAIN, p as u64))?;
            outcome(&traj, model, &grid)
        })?
    } else {
        let sim = LimitSimulator::new(limit, horizon, step, &grid, xi0)?;
        try_run_paths(n, |p| {
            let traj = sim.run(xi0, &mut path_rng(seed, LIMIT_DOMAIN, p as u64))?;
            outcome(&traj, model, &grid)
        })?
    };
    Ok(summarise(0.0, limit.dim(), horizon, grid, paths))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailRow {
    pub c: f64,
    pub tail: f64,
}

/// Empirical `P(sup_t |xi(t)| > c)` on a grid of levels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailTable {
    pub rows: Vec<TailRow>,
    pub non_increasing: bool,
}

pub fn ccc_table(ensemble: &EnsembleSummary, c_grid: &[f64]) -> TailTable {
    let mut levels = c_grid.to_vec();
    levels.sort_by(f64::total_cmp);
    let rows: Vec<TailRow> = levels.iter().map(|&c| TailRow { c, tail: tail(&ensemble.sup, c) }).collect();
    let non_increasing = rows.windows(2).all(|w| w[1].tail <= w[0].tail);
    TailTable { rows, non_increasing }
}

/// Default tail levels: quantiles of a reference sup sample.
pub fn default_c_grid(reference: &EnsembleSummary) -> Vec<f64> {
    let mut c: Vec<f64> = CCC_QUANTILES.iter().map(|&p| quantile(&reference.sup, p)).collect();
    c.dedup();
    c
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IncrementModulus {
    /// `max_{s<t} E|xi(t) - xi(s)|^2 / (t - s)` over the dyadic grid.
    pub max_ratio: f64,
    /// Mean of the ratio over adjacent grid pairs.
    pub finest_ratio: f64,
}

pub fn increment_modulus(ensemble: &EnsembleSummary) -> IncrementModulus {
    let g = &ensemble.grid;
    let n = ensemble.n_paths as f64;
    let ratio = |i: usize, j: usize| -> f64 {
        let mut s = 0.0;
        for p in 0..ensemble.n_paths {
            let mut sq = 0.0;
            for c in 0..ensemble.dim {
                let d = ensemble.grid_values[j][c][p] - ensemble.grid_values[i][c][p];
                sq += d * d;
            }
            s += sq;
        }
        s / n / (g[j] - g[i])
    };
    let mut max_ratio: f64 = 0.0;
    for i in 0..g.len() {
        for j in i + 1..g.len() {
            max_ratio = max_ratio.max(ratio(i, j));
        }
    }
    let finest_ratio = (0..g.len() - 1).map(|i| ratio(i, i + 1)).sum::<f64>() / (g.len() - 1) as f64;
    IncrementModulus { max_ratio, finest_ratio }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalDistance {
    pub t: f64,
    /// Per coordinate.
    pub w1: Vec<f64>,
    pub ks_d: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsRow {
    pub eps: f64,
    /// Terminal-time W1 to the limit sample, per coordinate.
    pub w1: Vec<f64>,
    pub w1_se: Vec<f64>,
    pub ks_d: Vec<f64>,
    pub ks_p: Vec<f64>,
    /// Marginals at `T/4`, `T/2`, `3T/4`.
    pub interior: Vec<MarginalDistance>,
    /// `mean(xi_eps(T)) - mean(xi_0(T))`, per coordinate.
    pub mean_gap: Vec<f64>,
    pub variance_gap: Vec<f64>,
    /// W1 between `B_eps(T)` and `B_0(T)`, per coordinate.
    pub b_w1: Vec<f64>,
    pub b_w1_se: Vec<f64>,
    /// W1 between the traces of `C(T)`.
    pub c_w1: f64,
    /// W1 between `Gamma_g(T)` samples, per catalogue probe.
    pub gamma_w1: Vec<f64>,
    pub ccc: TailTable,
    pub sup_second_moment: f64,
    pub increments: IncrementModulus,
    /// Rejected / proposed big-jump candidates.
    pub rejection_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitRow {
    pub ccc: TailTable,
    pub sup_second_moment: f64,
    pub increments: IncrementModulus,
    pub compound_poisson: bool,
    pub flow: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendVerdict {
    /// Indices `k` with `w[k + 1] > w[k]`.
    pub inversions: Vec<usize>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdicts {
    /// Per coordinate.
    pub w1_trend: Vec<TrendVerdict>,
    pub b_w1_trend: Vec<TrendVerdict>,
    /// Minimum over coordinates of the KS p-value at the smallest eps.
    pub ks_p_smallest: f64,
    pub ks_pass: bool,
    /// `max / min` across eps of `E sup |xi|^2`.
    pub sup_moment_spread: f64,
    /// `max / min` across eps of the maximal increment ratio.
    pub increment_spread: f64,
    pub uniform_bounds: bool,
    /// Largest tail at each level across eps.
    pub ccc_sup_over_eps: Vec<TailRow>,
    /// W1 trend and KS together.
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub version: String,
    pub seed: u64,
    pub horizon: f64,
    pub n_paths: usize,
    pub dim: usize,
    pub options: StudyOptions,
    pub c_grid: Vec<f64>,
    /// Descending eps.
    pub rows: Vec<EpsRow>,
    pub limit: LimitRow,
    /// Least-squares slope of `log W1` against `log eps`, first coordinate;
    /// descriptive only. `None` when some W1 is zero.
    pub log_log_slope: Option<f64>,
    pub verdicts: Verdicts,
}

impl ConvergenceReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// One row per eps. Per-coordinate columns carry a `_c` suffix.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "eps")?;
        for c in 0..self.dim {
            write!(w, ",w1_{c},w1_se_{c},ks_d_{c},ks_p_{c},mean_gap_{c},variance_gap_{c},b_w1_{c},b_w1_se_{c}")?;
        }
        writeln!(w, ",c_w1,gamma_w1_g1,gamma_w1_g2,gamma_w1_g3,sup_second_moment,increment_max_ratio,increment_finest_ratio,rejection_rate")?;
        for r in &self.rows {
            write!(w, "{}", r.eps)?;
            for c in 0..self.dim {
                write!(
                    w,
                    ",{},{},{},{},{},{},{},{}",
                    r.w1[c], r.w1_se[c], r.ks_d[c], r.ks_p[c], r.mean_gap[c], r.variance_gap[c], r.b_w1[c], r.b_w1_se[c]
                )?;
            }
            writeln!(
                w,
                ",{},{},{},{},{},{},{},{}",
                r.c_w1,
                r.gamma_w1[0],
                r.gamma_w1[1],
                r.gamma_w1[2],
                r.sup_second_moment,
                r.increments.max_ratio,
                r.increments.finest_ratio,
                r.rejection_rate
            )?;
        }
        Ok(())
    }
}

/// At most `allowed` increases, each within `k` combined standard errors.
pub fn trend_verdict(w: &[f64], se: &[f64], allowed: usize, k: f64) -> TrendVerdict {
    let mut inversions = Vec::new();
    let mut within = true;
    for i in 0..w.len().saturating_sub(1) {
        if w[i + 1] > w[i] {
            inversions.push(i);
            if w[i + 1] - w[i] > k * (se[i] * se[i] + se[i + 1] * se[i + 1]).sqrt() {
                within = false;
            }
        }
    }
    let pass = within && inversions.len() <= allowed;
    TrendVerdict { inversions, pass }
}

fn spread(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::MIN, f64::max);
    let min = v.iter().cloned().fold(f64::MAX, f64::min);
    if max == 0.0 {
        1.0
    } else if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn log_log_slope(eps: &[f64], w: &[f64]) -> Option<f64> {
    if eps.len() < 2 || w.iter().any(|&v| v <= 0.0) {
        return None;
    }
    let x: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let y: Vec<f64> = w.iter().map(|v| v.ln()).collect();
    let (mx, my) = (mean(&x), mean(&y));
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    Some(sxy / sxx)
}

fn distance_row(
    pre: &EnsembleSummary,
    lim: &EnsembleSummary,
    eps_index: usize,
    c_grid: &[f64],
    opts: &StudyOptions,
    seed: u64,
) -> Result<EpsRow> {
    let dim = pre.dim;
    let last = pre.grid.len() - 1;
    let stream = |coord: usize, kind: u64| ((eps_index as u64) << 16) | ((coord as u64) << 2) | kind;
    let mut row = EpsRow {
        eps: pre.eps,
        w1: Vec::new(),
        w1_se: Vec::new(),
        ks_d: Vec::new(),
        ks_p: Vec::new(),
        interior: Vec::new(),
        mean_gap: Vec::new(),
        variance_gap: Vec::new(),
        b_w1: Vec::new(),
        b_w1_se: Vec::new(),
        c_w1: wasserstein1(&pre.c_terminal, &lim.c_terminal)?,
        gamma_w1: (0..3)
            .map(|k| wasserstein1(&pre.gamma_terminal[k], &lim.gamma_terminal[k]))
            .collect::<Result<_>>()?,
        ccc: ccc_table(pre, c_grid),
        sup_second_moment: pre.sup_second_moment(),
        increments: increment_modulus(pre),
        rejection_rate: if pre.rejected + pre.events == 0 {
            0.0
        } else {
            pre.rejected as f64 / (pre.rejected + pre.events) as f64
        },
    };
    for c in 0..dim {
        let (a, b) = (pre.terminal(c), lim.terminal(c));
        row.w1.push(wasserstein1(a, b)?);
        row.w1_se.push(bootstrap_se(a, b, wasserstein1, opts.bootstrap_resamples, seed, stream(c, 0))?);
        let (d, p) = ks_statistic(a, b)?;
        row.ks_d.push(d);
        row.ks_p.push(p);
        row.mean_gap.push(mean(a) - mean(b));
        row.variance_gap.push(variance(a) - variance(b));
        let (ba, bb) = (&pre.b_terminal[c], &lim.b_terminal[c]);
        row.b_w1.push(wasserstein1(ba, bb)?);
        row.b_w1_se.push(bootstrap_se(ba, bb, wasserstein1, opts.bootstrap_resamples, seed, stream(c, 1))?);
    }
    for k in [last / 4, last / 2, 3 * last / 4] {
        let mut m = MarginalDistance { t: pre.grid[k], w1: Vec::new(), ks_d: Vec::new() };
        for c in 0..dim {
            m.w1.push(wasserstein1(pre.at_grid(k, c), lim.at_grid(k, c))?);
            m.ks_d.push(ks_statistic(pre.at_grid(k, c), lim.at_grid(k, c))?.0);
        }
        row.interior.push(m);
    }
    Ok(row)
}

/// Simulates `n` pre-limit paths for every `eps` (descending) and `n` limit
/// paths, and compares them.
///
/// The verdict passes when, for every coordinate, the terminal W1 is
/// non-increasing along the epsilon list up to the allowed inversions
/// (each within the SE bound), and the KS test at the smallest epsilon does
/// not reject at the configured level.
pub fn run_convergence_study(
    spec: &SwitchSpec,
    model: &JumpModel,
    eps: &[f64],
    horizon: f64,
    n: usize,
    seed: u64,
    opts: &StudyOptions,
) -> Result<ConvergenceReport> {
    Ok(run_convergence_study_with_samples(spec, model, eps, horizon, n, seed, opts)?.report)
}

/// A report together with the ensembles it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutput {
    pub report: ConvergenceReport,
    /// One per eps, in report order.
    pub ensembles: Vec<EnsembleSummary>,
    pub limit: EnsembleSummary,
}

/// [`run_convergence_study`], keeping the per-path samples.
pub fn run_convergence_study_with_samples(
    spec: &SwitchSpec,
    model: &JumpModel,
    eps: &[f64],
    horizon: f64,
    n: usize,
    seed: u64,
    opts: &StudyOptions,
) -> Result<StudyOutput> {
    check_n(n)?;
    if eps.is_empty() {
        return Err(Error::Argument("eps list is empty".into()));
    }
    if eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Argument("eps list must be strictly descending".into()));
    }
    let dim = model.dim();
    let xi0 = opts.xi0.clone().unwrap_or_else(|| vec![0.0; dim]);
    if xi0.len() != dim {
        return Err(Error::Dimension { expected: dim, got: xi0.len() });
    }
    let pi = stationary_distribution(&build_generator(spec)?)?;
    let limit = assemble_limit(model, &pi)?;
    let lim = limit_ensemble(&limit, horizon, n, seed, &xi0, opts.ode_step)?;
    let pre: Vec<EnsembleSummary> = eps
        .iter()
        .enumerate()
        .map(|(i, &e)| prelimit_ensemble(spec, model, e, i, horizon, n, seed, &xi0, opts.x0))
        .collect::<Result<_>>()?;
    let c_grid = opts.c_grid.clone().unwrap_or_else(|| default_c_grid(&lim));
    let rows: Vec<EpsRow> = pre
        .iter()
        .enumerate()
        .map(|(i, p)| distance_row(p, &lim, i, &c_grid, opts, seed))
        .collect::<Result<_>>()?;

    let w1_trend: Vec<TrendVerdict> = (0..dim)
        .map(|c| {
            let w: Vec<f64> = rows.iter().map(|r| r.w1[c]).collect();
            let se: Vec<f64> = rows.iter().map(|r| r.w1_se[c]).collect();
            trend_verdict(&w, &se, opts.inversions_allowed, opts.se_multiplier)
        })
        .collect();
    let b_w1_trend: Vec<TrendVerdict> = (0..dim)
        .map(|c| {
            let w: Vec<f64> = rows.iter().map(|r| r.b_w1[c]).collect();
            let se: Vec<f64> = rows.iter().map(|r| r.b_w1_se[c]).collect();
            trend_verdict(&w, &se, opts.inversions_allowed, opts.se_multiplier)
        })
        .collect();
    let smallest = rows.last().expect("non-empty");
    let ks_p_smallest = smallest.ks_p.iter().cloned().fold(1.0, f64::min);
    let ks_pass = ks_p_smallest >= opts.ks_level;
    let sup_moment_spread = spread(&rows.iter().map(|r| r.sup_second_moment).collect::<Vec<_>>());
    let increment_spread = spread(&rows.iter().map(|r| r.increments.max_ratio).collect::<Vec<_>>());
    let ccc_sup_over_eps = (0..c_grid.len())
        .map(|k| TailRow {
            c: rows[0].ccc.rows[k].c,
            tail: rows.iter().map(|r| r.ccc.rows[k].tail).fold(0.0, f64::max),
        })
        .collect();
    let verdicts = Verdicts {
        pass: w1_trend.iter().all(|t| t.pass) && ks_pass,
        w1_trend,
        b_w1_trend,
        ks_p_smallest,
        ks_pass,
        sup_moment_spread,
        increment_spread,
        uniform_bounds: sup_moment_spread < UNIFORMITY_FACTOR && increment_spread < UNIFORMITY_FACTOR,
        ccc_sup_over_eps,
    };
    let limit_row = LimitRow {
        ccc: ccc_table(&lim, &c_grid),
        sup_second_moment: lim.sup_second_moment(),
        increments: increment_modulus(&lim),
        compound_poisson: limit.compound_poisson().is_some(),
        flow: limit.has_flow(),
    };
    let report = ConvergenceReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        horizon,
        n_paths: n,
        dim,
        options: opts.clone(),
        c_grid,
        log_log_slope: log_log_slope(eps, &rows.iter().map(|r| r.w1[0]).collect::<Vec<_>>()),
        rows,
        limit: limit_row,
        verdicts,
    };
    Ok(StudyOutput { report, ensembles: pre, limit: lim })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jump_model::{Displacement, JumpComponent, JumpFamily, StateDynamics};
    use approx::assert_abs_diff_eq;

    fn frozen() -> (SwitchSpec, JumpModel) {
        let spec = SwitchSpec::new(
            vec!["a".into(), "b".into()],
            vec![1.0, 1.0],
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        )
        .unwrap();
        let st = StateDynamics { components: vec![], rho: 0.0, displacement: Displacement::zero(1) };
        (spec, JumpModel::new(1, vec![st.clone(), st]).unwrap())
    }

    fn unit_poisson(rate: f64) -> JumpModel {
        let c = JumpComponent::new(JumpFamily::Point { value: vec![1.0] }, rate);
        let st = StateDynamics { components: vec![c], rho: 0.0, displacement: Displacement::zero(1) };
        JumpModel::new(1, vec![st]).unwrap()
    }

    #[test]
    fn degenerate_study_passes_with_zero_distances() {
        let (spec, model) = frozen();
        let opts = StudyOptions { xi0: Some(vec![0.5]), ..Default::default() };
        let r = run_convergence_study(&spec, &model, &[0.1, 0.05], 1.0, 100, 3, &opts).unwrap();
        for row in &r.rows {
            assert_eq!(row.w1, vec![0.0]);
            assert_eq!(row.ks_d, vec![0.0]);
            assert_eq!(row.b_w1, vec![0.0]);
            assert_eq!(row.increments.max_ratio, 0.0);
            assert!(row.ccc.rows.iter().filter(|t| t.c > 0.5).all(|t| t.tail == 0.0));
        }
        assert!(r.verdicts.pass);
    }

    #[test]
    fn small_ensembles_are_rejected() {
        let (spec, model) = frozen();
        let r = run_convergence_study(&spec, &model, &[0.1], 1.0, 99, 0, &StudyOptions::default());
        assert!(matches!(r, Err(Error::Argument(_))));
    }

    #[test]
    fn trend_rule() {
        assert!(trend_verdict(&[3.0, 2.0, 1.0], &[0.1; 3], 1, 2.0).pass);
        assert!(trend_verdict(&[3.0, 2.0, 2.1, 1.0], &[0.1; 4], 1, 2.0).pass);
        assert!(!trend_verdict(&[3.0, 2.0, 2.5, 1.0], &[0.1; 4], 1, 2.0).pass);
        assert!(!trend_verdict(&[3.0, 3.1, 2.0, 2.1], &[0.1; 4], 1, 2.0).pass);
    }

    #[test]
    fn compound_poisson_increment_ratio() {
        // Lambda = 2, alpha = 1: E|dxi|^2 / dt = 2 + 4 dt
        let spec = SwitchSpec::trivial();
        let pi = stationary_distribution(&build_generator(&spec).unwrap()).unwrap();
        let model = unit_poisson(2.0);
        let limit = assemble_limit(&model, &pi).unwrap();
        assert!(limit.compound_poisson().is_some());
        let e = limit_ensemble(&limit, 1.0, 20_000, 11, &[0.0], None).unwrap();
        let m = increment_modulus(&e);
        assert!((m.finest_ratio - 2.25).abs() < 0.1, "finest {}", m.finest_ratio);
        // quantile self-consistency of the tail table
        let c99 = quantile(&e.sup, 0.99);
        let t = ccc_table(&e, &[c99]).rows[0].tail;
        assert!(t <= 0.01);
    }

    #[test]
    fn report_is_deterministic() {
        let spec = SwitchSpec::trivial();
        let model = unit_poisson(1.0);
        let opts = StudyOptions { bootstrap_resamples: 20, ..Default::default() };
        let a = run_convergence_study(&spec, &model, &[0.2, 0.1], 1.0, 200, 5, &opts).unwrap();
        let b = run_convergence_study(&spec, &model, &[0.2, 0.1], 1.0, 200, 5, &opts).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let mut csv = Vec::new();
        a.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 3);
    }

    #[test]
    fn tails_are_monotone() {
        let spec = SwitchSpec::trivial();
        let model = unit_poisson(2.0);
        let e = prelimit_ensemble(&spec, &model, 0.1, 0, 1.0, 500, 1, &[0.0], 0).unwrap();
        let t = ccc_table(&e, &[3.0, 0.5, 1.0, 2.0]);
        assert!(t.non_increasing);
        assert_abs_diff_eq!(t.rows[0].c, 0.5);
        assert!(e.sup.iter().zip(e.terminal(0)).all(|(s, x)| *s >= x.abs()));
    }
}
