use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use plii_sim::averaging::{assemble_limit, check_pa3, perturbation_residual, LimitModel, Pa3Report, ResidualTable};
use plii_sim::config::{LoadedModel, ModelConfig};
use plii_sim::ensemble::try_run_paths;
use plii_sim::jump_model::{validate_c3_c4, validate_pa, C3C4Report, JumpFamily, JumpModel, PaReport};
use plii_sim::metrics::{mean, variance};
use plii_sim::probe::{norm, GProbe, SmoothProbe};
use plii_sim::rng::{eps_domain, path_rng, LIMIT_DOMAIN};
use plii_sim::simulate::{
    predictable_characteristics, simulate_compound_poisson, CharacteristicPaths, LimitSimulator, PrelimitSimulator,
    Trajectory,
};
use plii_sim::switching::{build_generator, stationary_distribution, GeneratorMatrix, StationaryLaw};
use plii_sim::verify::{run_convergence_study_with_samples, StudyOptions, DYADIC_LEVEL};
use plii_sim::Error;
use serde::Serialize;

use crate::manifest::write_manifest;
use crate::{Format, Kind, RunArgs};

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NonStochasticRow { .. } | Error::Reducible { .. } | Error::EmptyChain => {
                CliError::Validation(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("i/o: {e}"))
    }
}

/// Output directory that remembers which files it created.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        self.files.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Runtime(e.to_string()))?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn text(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        let mut w = self.create(name)?;
        w.write_all(body.as_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }
}

fn check_args(args: &RunArgs) -> Result<(), CliError> {
    let bad = |m: String| Err(CliError::Runtime(m));
    if args.eps.is_empty() || args.eps.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
        return bad(format!("--eps values must lie in (0, 1], got {:?}", args.eps));
    }
    if !(args.horizon > 0.0 && args.horizon.is_finite()) {
        return bad(format!("--T must be finite and > 0, got {}", args.horizon));
    }
    if matches!(args.command, Kind::Simulate | Kind::Limit | Kind::Verify) && args.paths == 0 {
        return bad("--N must be >= 1".into());
    }
    if !(args.u_max > 0.0 && args.u_max.is_finite()) {
        return bad(format!("--u-max must be finite and > 0, got {}", args.u_max));
    }
    Ok(())
}

/// Runs one command into `out` and writes its manifest. A failed check is
/// reported after all outputs exist.
pub fn execute(args: &RunArgs, model_text: &str, out: &Path) -> Result<(), CliError> {
    check_args(args)?;
    let loaded = ModelConfig::parse(model_text).and_then(|c| c.build()).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut outputs = Outputs::new(out)?;
    let failure = match args.command {
        Kind::Validate => cmd_validate(args, &loaded, &mut outputs)?,
        Kind::Stationary => cmd_stationary(args, &loaded, &mut outputs)?,
        Kind::Simulate => cmd_simulate(args, &loaded, &mut outputs)?,
        Kind::Limit => cmd_limit(args, &loaded, &mut outputs)?,
        Kind::Verify => cmd_verify(args, &loaded, &mut outputs)?,
    };
    write_manifest(&outputs, args, model_text)?;
    match failure {
        Some(msg) => Err(CliError::Validation(msg)),
        None => Ok(()),
    }
}

fn switching(loaded: &LoadedModel) -> Result<(GeneratorMatrix, StationaryLaw), CliError> {
    let q = build_generator(&loaded.spec)?;
    q.ensure_irreducible()?;
    let pi = stationary_distribution(&q)?;
    Ok((q, pi))
}

fn eps_tag(e: f64) -> String {
    format!("eps{e}")
}

fn dyadic(horizon: f64) -> Vec<f64> {
    let n = 1usize << DYADIC_LEVEL;
    (0..=n).map(|k| if k == n { horizon } else { horizon * k as f64 / n as f64 }).collect()
}

// --- validate -------------------------------------------------------------

#[derive(Serialize)]
struct SwitchingCheck {
    passed: bool,
    states: Vec<String>,
    pi: Option<Vec<f64>>,
    residual: Option<f64>,
    failure: Option<String>,
}

#[derive(Serialize)]
struct ValidationReport {
    passed: bool,
    switching: SwitchingCheck,
    eps_grid: Vec<f64>,
    u_grid: Vec<Vec<f64>>,
    c_grid: Vec<f64>,
    pa: Option<PaReport>,
    c3c4: Option<C3C4Report>,
    pa3: Option<Pa3Report>,
    perturbation: Option<ResidualTable>,
}

fn u_grid(dim: usize, u_max: f64) -> Vec<Vec<f64>> {
    let steps = 20;
    let axis: Vec<f64> = (0..=steps).map(|k| -u_max + 2.0 * u_max * k as f64 / steps as f64).collect();
    if dim == 1 {
        return axis.into_iter().map(|u| vec![u]).collect();
    }
    let mut grid = vec![vec![0.0; dim]];
    for i in 0..dim {
        for &a in &axis {
            if a != 0.0 {
                let mut u = vec![0.0; dim];
                u[i] = a;
                grid.push(u);
            }
        }
    }
    grid
}

/// Levels up to twice the largest jump reach, so the last tail is negligible.
fn c_grid(model: &JumpModel) -> Vec<f64> {
    let mut reach: f64 = 0.0;
    for s in model.states() {
        for c in &s.components {
            let r = match &c.family {
                JumpFamily::Point { value } => norm(value),
                JumpFamily::Gauss { mean, sd } => norm(mean) + 10.0 * sd.iter().cloned().fold(0.0, f64::max),
                JumpFamily::Uniform { low, high } => norm(low).max(norm(high)),
            };
            reach = reach.max(r);
        }
    }
    if reach == 0.0 {
        return vec![1.0];
    }
    [0.125, 0.25, 0.5, 1.0, 2.0].iter().map(|f| f * reach).collect()
}

fn cmd_validate(args: &RunArgs, loaded: &LoadedModel, out: &mut Outputs) -> Result<Option<String>, CliError> {
    let model = &loaded.model;
    let mut eps = args.eps.clone();
    eps.sort_by(|a, b| b.total_cmp(a));
    eps.dedup();
    let ugrid = u_grid(model.dim(), args.u_max);
    let cgrid = c_grid(model);
    let mut failures = Vec::new();

    let (switching_check, pi) = match switching(loaded) {
        Ok((q, pi)) => (
            SwitchingCheck {
                passed: true,
                states: loaded.spec.states().to_vec(),
                residual: Some(pi.residual(&q)),
                pi: Some(pi.probs().to_vec()),
                failure: None,
            },
            Some(pi),
        ),
        Err(CliError::Validation(m)) => {
            failures.push(m.clone());
            let check =
                SwitchingCheck { passed: false, states: loaded.spec.states().to_vec(), pi: None, residual: None, failure: Some(m) };
            (check, None)
        }
        Err(e) => return Err(e),
    };

    let pa = validate_pa(model, &eps, &ugrid, &GProbe::CATALOGUE)?;
    failures.extend(pa.failures.iter().cloned());
    let c3c4 = validate_c3_c4(model, &cgrid, &ugrid)?;
    failures.extend(c3c4.failures.iter().cloned());
    let (pa3, perturbation) = match &pi {
        Some(pi) => {
            let pa3 = check_pa3(model, pi)?;
            let pert = if model.dim() == 1 {
                let u1: Vec<f64> = ugrid.iter().map(|u| u[0]).collect();
                Some(perturbation_residual(&loaded.spec, model, SmoothProbe::Linear, &u1, &eps)?)
            } else {
                None
            };
            (Some(pa3), pert)
        }
        None => (None, None),
    };
    let report = ValidationReport {
        passed: failures.is_empty(),
        switching: switching_check,
        eps_grid: eps,
        u_grid: ugrid,
        c_grid: cgrid,
        pa: Some(pa),
        c3c4: Some(c3c4),
        pa3,
        perturbation,
    };
    match args.format {
        Format::Json => out.json("validation.json", &report)?,
        Format::Csv => {
            let mut body = String::from("check,passed,detail\n");
            let row = |name: &str, ok: bool, detail: &str| format!("{name},{ok},\"{}\"\n", detail.replace('"', "'"));
            body += &row("switching", report.switching.passed, report.switching.failure.as_deref().unwrap_or(""));
            let pa = report.pa.as_ref().expect("present");
            body += &row("approximation", pa.passed(), &pa.failures.join("; "));
            let c = report.c3c4.as_ref().expect("present");
            body += &row("integrability_growth", c.passed(), &c.failures.join("; "));
            if let Some(p) = &report.pa3 {
                body += &row("compound_poisson_balance", p.compound_poisson_enabled, &format!("gap = {}", p.gap));
            }
            if let Some(t) = &report.perturbation {
                body += &row("perturbation_residual", t.bounded, &format!("spread = {}", t.spread));
            }
            out.text("validation.csv", &body)?;
        }
    }
    if failures.is_empty() {
        println!("validation passed");
        Ok(None)
    } else {
        for f in &failures {
            println!("FAIL {f}");
        }
        Ok(Some(failures.join("; ")))
    }
}

// --- stationary -----------------------------------------------------------

#[derive(Serialize)]
struct StationaryReport {
    states: Vec<String>,
    pi: Vec<f64>,
    residual: f64,
    generator: Vec<Vec<f64>>,
}

fn cmd_stationary(args: &RunArgs, loaded: &LoadedModel, out: &mut Outputs) -> Result<Option<String>, CliError> {
    let (q, pi) = switching(loaded)?;
    let m = q.matrix();
    let report = StationaryReport {
        states: loaded.spec.states().to_vec(),
        pi: pi.probs().to_vec(),
        residual: pi.residual(&q),
        generator: (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect(),
    };
    let shown: Vec<String> = report.pi.iter().map(|p| format!("{p}")).collect();
    println!("pi = ({})", shown.join(", "));
    for (s, p) in report.states.iter().zip(&report.pi) {
        println!("  {s}: {p}");
    }
    match args.format {
        Format::Json => out.json("stationary.json", &report)?,
        Format::Csv => {
            let mut body = String::from("index,state,pi\n");
            for (i, (s, p)) in report.states.iter().zip(&report.pi).enumerate() {
                body += &format!("{i},{s},{p}\n");
            }
            out.text("stationary.csv", &body)?;
        }
    }
    Ok(None)
}

// --- simulate / limit -------------------------------------------------------

#[derive(Serialize)]
struct EnsembleRow {
    label: String,
    eps: f64,
    paths: usize,
    terminal_mean: Vec<f64>,
    terminal_variance: Vec<f64>,
    mean_events: f64,
    rejection_rate: f64,
}

fn ensemble_row(label: String, eps: f64, trajs: &[Trajectory]) -> EnsembleRow {
    let dim = trajs[0].dim;
    let terminal: Vec<Vec<f64>> = (0..dim).map(|c| trajs.iter().map(|t| t.terminal()[c]).collect()).collect();
    let events: u64 = trajs.iter().map(|t| t.len() as u64).sum();
    let rejected: u64 = trajs.iter().map(|t| t.rejected).sum();
    EnsembleRow {
        label,
        eps,
        paths: trajs.len(),
        terminal_mean: terminal.iter().map(|v| mean(v)).collect(),
        terminal_variance: terminal.iter().map(|v| variance(v)).collect(),
        mean_events: events as f64 / trajs.len() as f64,
        rejection_rate: if events + rejected == 0 { 0.0 } else { rejected as f64 / (events + rejected) as f64 },
    }
}

fn write_paths(
    out: &mut Outputs,
    tag: &str,
    trajs: &[Trajectory],
    chars: &[CharacteristicPaths],
) -> Result<(), CliError> {
    let dim = trajs[0].dim;
    let mut w = out.create(&format!("trajectories_{tag}.csv"))?;
    Trajectory::write_csv_header(&mut w, dim, true)?;
    for (p, t) in trajs.iter().enumerate() {
        t.write_csv_records(&mut w, Some(p))?;
    }
    w.flush()?;
    let mut w = out.create(&format!("characteristics_{tag}.csv"))?;
    CharacteristicPaths::write_csv_header(&mut w, dim, true)?;
    for (p, c) in chars.iter().enumerate() {
        c.write_csv_records(&mut w, Some(p))?;
    }
    w.flush()?;
    Ok(())
}

fn write_rows<T: Serialize>(out: &mut Outputs, args: &RunArgs, rows: &T, csv: String) -> Result<(), CliError> {
    match args.format {
        Format::Json => out.json("summary.json", rows),
        Format::Csv => out.text("summary.csv", &csv),
    }
}

fn rows_csv(rows: &[EnsembleRow]) -> String {
    let mut s = String::from("label,eps,paths,coord,terminal_mean,terminal_variance,mean_events,rejection_rate\n");
    for r in rows {
        for c in 0..r.terminal_mean.len() {
            s += &format!(
                "{},{},{},{c},{},{},{},{}\n",
                r.label, r.eps, r.paths, r.terminal_mean[c], r.terminal_variance[c], r.mean_events, r.rejection_rate
            );
        }
    }
    s
}

fn cmd_simulate(args: &RunArgs, loaded: &LoadedModel, out: &mut Outputs) -> Result<Option<String>, CliError> {
    switching(loaded)?;
    let grid = dyadic(args.horizon);
    let mut rows = Vec::new();
    for (i, &eps) in args.eps.iter().enumerate() {
        let sim = PrelimitSimulator::new(&loaded.spec, &loaded.model, eps, args.horizon)?;
        let domain = eps_domain(i);
        let trajs = try_run_paths(args.paths, |p| sim.run(&loaded.xi0, loaded.x0, &mut path_rng(args.seed, domain, p as u64)))?;
        let chars = try_run_paths(args.paths, |p| predictable_characteristics(&trajs[p], &loaded.model, &grid))?;
        let tag = eps_tag(eps);
        write_paths(out, &tag, &trajs, &chars)?;
        rows.push(ensemble_row(tag, eps, &trajs));
    }
    let csv = rows_csv(&rows);
    write_rows(out, args, &rows, csv)?;
    println!("simulated {} paths for each of {} eps values", args.paths, args.eps.len());
    Ok(None)
}

#[derive(Serialize)]
struct LimitSummary {
    pi: Vec<f64>,
    flow: bool,
    compound_poisson: bool,
    total_rate_bound: f64,
    pa3: Pa3Report,
    ensemble: EnsembleRow,
}

fn limit_paths(args: &RunArgs, limit: &LimitModel, xi0: &[f64], grid: &[f64]) -> Result<Vec<Trajectory>, CliError> {
    let step = args.ode_step.unwrap_or(1e-3 * args.horizon);
    let rng = |p: usize| path_rng(args.seed, LIMIT_DOMAIN, p as u64);
    Ok(match limit.compound_poisson() {
        Some(cp) => try_run_paths(args.paths, |p| simulate_compound_poisson(&cp, args.horizon, xi0, &mut rng(p)))?,
        None => {
            let sim = LimitSimulator::new(limit, args.horizon, step, grid, xi0)?;
            try_run_paths(args.paths, |p| sim.run(xi0, &mut rng(p)))?
        }
    })
}

fn cmd_limit(args: &RunArgs, loaded: &LoadedModel, out: &mut Outputs) -> Result<Option<String>, CliError> {
    let (_, pi) = switching(loaded)?;
    let limit = assemble_limit(&loaded.model, &pi)?;
    out.json("limit_model.json", &ModelConfig::from_limit(&limit, &loaded.xi0))?;
    let grid = dyadic(args.horizon);
    let trajs = limit_paths(args, &limit, &loaded.xi0, &grid)?;
    let chars = try_run_paths(args.paths, |p| predictable_characteristics(&trajs[p], limit.model(), &grid))?;
    write_paths(out, "limit", &trajs, &chars)?;
    let summary = LimitSummary {
        pi: pi.probs().to_vec(),
        flow: limit.has_flow(),
        compound_poisson: limit.compound_poisson().is_some(),
        total_rate_bound: limit.rate_bound(),
        pa3: check_pa3(&loaded.model, &pi)?,
        ensemble: ensemble_row("limit".into(), 0.0, &trajs),
    };
    let csv = rows_csv(std::slice::from_ref(&summary.ensemble));
    write_rows(out, args, &summary, csv)?;
    println!(
        "limit: {} paths, flow {}, compound Poisson {}",
        args.paths, summary.flow, summary.compound_poisson
    );
    Ok(None)
}

// --- verify -----------------------------------------------------------------

fn cmd_verify(args: &RunArgs, loaded: &LoadedModel, out: &mut Outputs) -> Result<Option<String>, CliError> {
    switching(loaded)?;
    let opts = StudyOptions { ode_step: args.ode_step, xi0: Some(loaded.xi0.clone()), x0: loaded.x0, ..Default::default() };
    let study =
        run_convergence_study_with_samples(&loaded.spec, &loaded.model, &args.eps, args.horizon, args.paths, args.seed, &opts)?;
    let report = &study.report;
    match args.format {
        Format::Json => out.text("report.json", &(report.to_json() + "\n"))?,
        Format::Csv => {
            let mut w = out.create("report.csv")?;
            report.write_csv(&mut w)?;
            w.flush()?;
        }
    }
    if args.samples {
        for e in &study.ensembles {
            let mut w = out.create(&format!("samples_{}.csv", eps_tag(e.eps)))?;
            e.write_samples_csv(&mut w)?;
            w.flush()?;
        }
        let mut w = out.create("samples_limit.csv")?;
        study.limit.write_samples_csv(&mut w)?;
        w.flush()?;
    }
    for r in &report.rows {
        println!("eps {:<6} W1 {:.5} (se {:.5})  KS D {:.5} p {:.4}", r.eps, r.w1[0], r.w1_se[0], r.ks_d[0], r.ks_p[0]);
    }
    let v = &report.verdicts;
    println!("verdict: {}", if v.pass { "PASS" } else { "FAIL" });
    if v.pass {
        Ok(None)
    } else {
        Ok(Some(format!(
            "convergence verdict FAIL (W1 trend {:?}, KS p at smallest eps {})",
            v.w1_trend.iter().map(|t| t.pass).collect::<Vec<_>>(),
            v.ks_p_smallest
        )))
    }
}
