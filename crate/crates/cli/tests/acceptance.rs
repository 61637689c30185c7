//! Acceptance suite. Runs every criterion, prints one line each and exits
//! non-zero if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use plii_sim::averaging::{perturbation_residual, CompoundPoisson};
use plii_sim::config::{LoadedModel, ModelConfig};
use plii_sim::jump_model::{validate_pa, JumpFamily};
use plii_sim::metrics::{mean, variance};
use plii_sim::probe::{GProbe, SmoothProbe};
use plii_sim::rng::path_rng;
use plii_sim::simulate::{simulate_compound_poisson, simulate_prelimit, EventKind};
use plii_sim::switching::{build_generator, solve_poisson, stationary_distribution, SwitchSpec};
use plii_sim::verify::{run_convergence_study, ConvergenceReport, StudyOptions};
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson};

const EPS_GRID: [f64; 4] = [0.1, 0.05, 0.02, 0.01];
const STUDY_SEED: u64 = 20261019;
const STUDY_PATHS: usize = 10_000;
const HORIZON: f64 = 1.0;

const STATIONARY_TOL: f64 = 1e-10;
const POISSON_TOL: f64 = 1e-9;
const RANDOM_SPECS: usize = 100;
const SWITCHING_BUDGET: Duration = Duration::from_secs(5);

const CLOSED_FORM_TOL: f64 = 1e-12;

const CP_RATE: f64 = 2.0;
const CP_HORIZON: f64 = 3.0;
const CP_PATHS: usize = 100_000;
const CP_SE_BAND: f64 = 3.0;

const COUNT_RATE: f64 = 2.0;
const COUNT_PATHS: usize = 10_000;
const CHI2_LEVEL: f64 = 0.01;
const COUNT_POOL_FROM: usize = 7;

const KS_LEVEL: f64 = 0.01;
const PERTURBATION_GAP_TOL: f64 = 1e-10;
const PERTURBATION_SPREAD_TOL: f64 = 1.01;
const UNIFORMITY_TOL: f64 = 2.0;

const REPLAY_PATHS: usize = 200;

type Outcome = Result<String, String>;

fn fixture_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/two_state.json")
}

fn fixture() -> LoadedModel {
    ModelConfig::load(&fixture_path()).and_then(|c| c.build()).expect("fixture loads")
}

fn study() -> &'static ConvergenceReport {
    static STUDY: OnceLock<ConvergenceReport> = OnceLock::new();
    STUDY.get_or_init(|| {
        let m = fixture();
        let opts = StudyOptions { xi0: Some(m.xi0.clone()), x0: m.x0, ..Default::default() };
        run_convergence_study(&m.spec, &m.model, &EPS_GRID, HORIZON, STUDY_PATHS, STUDY_SEED, &opts)
            .expect("study runs")
    })
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Random irreducible chains: a directed cycle through all states plus
/// random extra edges.
fn random_spec(index: u64) -> SwitchSpec {
    let mut rng = path_rng(7, 0xC1, index);
    let n = rng.random_range(1..=6usize);
    let states = (0..n).map(|i| format!("s{i}")).collect();
    let q = (0..n).map(|_| rng.random_range(0.1..5.0)).collect();
    let p = (0..n)
        .map(|i| {
            if n == 1 {
                return vec![1.0];
            }
            let mut row: Vec<f64> = (0..n)
                .map(|j| if j == i || rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.01..1.0) })
                .collect();
            row[(i + 1) % n] += rng.random_range(0.01..1.0);
            let s: f64 = row.iter().sum();
            row.iter().map(|v| v / s).collect()
        })
        .collect();
    SwitchSpec::new(states, q, p).expect("valid spec")
}

fn switching_identities() -> Outcome {
    let start = Instant::now();
    let (mut worst_pi, mut worst_poisson) = (0.0f64, 0.0f64);
    for k in 0..RANDOM_SPECS as u64 {
        let spec = random_spec(k);
        let q = build_generator(&spec).map_err(|e| e.to_string())?;
        let pi = stationary_distribution(&q).map_err(|e| e.to_string())?;
        worst_pi = worst_pi.max(pi.residual(&q));
        let mut rng = path_rng(11, 0xC1, k);
        let raw: Vec<f64> = (0..spec.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let centre = pi.mean(&raw);
        let f: Vec<f64> = raw.iter().map(|v| v - centre).collect();
        let h = solve_poisson(&q, &f, &pi).map_err(|e| e.to_string())?;
        let r = q.apply(&h).iter().zip(&f).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst_poisson = worst_poisson.max(r);
    }
    let elapsed = start.elapsed();
    check(
        worst_pi <= STATIONARY_TOL && worst_poisson <= POISSON_TOL && elapsed < SWITCHING_BUDGET,
        format!(
            "{RANDOM_SPECS} chains: max |pi Q| = {worst_pi:.2e} (<= {STATIONARY_TOL:e}), \
             max Poisson residual = {worst_poisson:.2e} (<= {POISSON_TOL:e}), {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn approximation_ledger() -> Outcome {
    let m = fixture();
    let u: Vec<Vec<f64>> = (0..=20).map(|k| vec![-5.0 + 0.5 * k as f64]).collect();
    let pa = validate_pa(&m.model, &EPS_GRID, &u, &GProbe::CATALOGUE).map_err(|e| e.to_string())?;
    let theta_b = pa.rows.iter().fold(0.0f64, |a, r| a.max(r.theta_b.abs()));
    let strict_c = pa.summary.windows(2).all(|w| w[1].theta_c < w[0].theta_c);
    check(
        theta_b == 0.0 && pa.max_closed_form_gap <= CLOSED_FORM_TOL && pa.passed() && strict_c,
        format!(
            "theta_b = {theta_b}, closed-form gap {:.1e} (<= {CLOSED_FORM_TOL:e}), theta_c {:?}, monotone: {}",
            pa.max_closed_form_gap,
            pa.summary.iter().map(|s| s.theta_c).collect::<Vec<_>>(),
            pa.passed() && strict_c
        ),
    )
}

fn compound_poisson_moments() -> Outcome {
    let law = CompoundPoisson::new(vec![(CP_RATE, JumpFamily::Point { value: vec![1.0] })]).map_err(|e| e.to_string())?;
    let ends: Vec<f64> = (0..CP_PATHS as u64)
        .map(|i| {
            let mut rng = path_rng(3, 0xC3, i);
            simulate_compound_poisson(&law, CP_HORIZON, &[0.0], &mut rng).map(|t| t.terminal()[0])
        })
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let lambda = CP_RATE * CP_HORIZON;
    let n = CP_PATHS as f64;
    let (m, v) = (mean(&ends), variance(&ends));
    let se_mean = (lambda / n).sqrt();
    // Poisson fourth central moment is lambda (1 + 3 lambda).
    let se_var = ((lambda * (1.0 + 3.0 * lambda) - lambda * lambda) / n).sqrt();
    check(
        (m - lambda).abs() <= CP_SE_BAND * se_mean && (v - lambda).abs() <= CP_SE_BAND * se_var,
        format!("mean {m:.4} (se {se_mean:.4}), variance {v:.4} (se {se_var:.4}), target {lambda}, band {CP_SE_BAND} se"),
    )
}

fn jump_counts() -> Outcome {
    let cfg = ModelConfig::parse(&format!(
        r#"{{"schema":"plii-model/1","dimension":1,
            "switching":{{"states":["only"],"q":[1],"P":[[1]]}},
            "jumps":[[{{"family":"point","params":{{"value":1}},"rate":{COUNT_RATE}}}]],
            "drift":{{"rho":[0],"d":[{{"offset":0}}]}}}}"#
    ))
    .map_err(|e| e.to_string())?;
    let m = cfg.build().map_err(|e| e.to_string())?;
    let mut observed = vec![0usize; COUNT_POOL_FROM + 1];
    for i in 0..COUNT_PATHS as u64 {
        let mut rng = path_rng(4, 0xC4, i);
        let t = simulate_prelimit(&m.spec, &m.model, 0.1, HORIZON, &[0.0], 0, &mut rng).map_err(|e| e.to_string())?;
        observed[t.count(EventKind::BigJump).min(COUNT_POOL_FROM)] += 1;
    }
    let law = Poisson::new(COUNT_RATE * HORIZON).map_err(|e| e.to_string())?;
    let mut probs: Vec<f64> = (0..COUNT_POOL_FROM as u64).map(|k| law.pmf(k)).collect();
    probs.push(1.0 - probs.iter().sum::<f64>());
    let n = COUNT_PATHS as f64;
    let stat: f64 = observed.iter().zip(&probs).map(|(&o, p)| (o as f64 - n * p).powi(2) / (n * p)).sum();
    let df = (observed.len() - 1) as f64;
    let p = 1.0 - ChiSquared::new(df).map_err(|e| e.to_string())?.cdf(stat);
    check(p >= CHI2_LEVEL, format!("chi-square {stat:.3} on {df} df, p = {p:.4} (>= {CHI2_LEVEL})"))
}

fn convergence_verdict() -> Outcome {
    let r = study();
    let v = &r.verdicts;
    let w1: Vec<String> = r.rows.iter().map(|row| format!("{:.4}", row.w1[0])).collect();
    check(
        v.pass && v.ks_p_smallest >= KS_LEVEL,
        format!(
            "W1 [{}], inversions {:?}, KS p at eps {} = {:.4} (>= {KS_LEVEL})",
            w1.join(", "),
            v.w1_trend[0].inversions,
            EPS_GRID[EPS_GRID.len() - 1],
            v.ks_p_smallest
        ),
    )
}

fn characteristic_trend() -> Outcome {
    let r = study();
    let b: Vec<f64> = r.rows.iter().map(|row| row.b_w1[0]).collect();
    let strict = b.windows(2).all(|w| w[1] < w[0]);
    check(strict, format!("W1 of B(T): {b:.4?}, strictly decreasing: {strict}"))
}

fn perturbation_bound() -> Outcome {
    let m = fixture();
    let u: Vec<f64> = (0..=40).map(|k| -5.0 + 0.25 * k as f64).collect();
    let t = perturbation_residual(&m.spec, &m.model, SmoothProbe::Linear, &u, &EPS_GRID).map_err(|e| e.to_string())?;
    check(
        t.max_closed_form_gap <= PERTURBATION_GAP_TOL && t.spread <= PERTURBATION_SPREAD_TOL,
        format!(
            "sup|r|/eps {:.6?}, spread {:.6} (<= {PERTURBATION_SPREAD_TOL}), closed-form gap {:.1e} (<= {PERTURBATION_GAP_TOL:e})",
            t.scaled_sup, t.spread, t.max_closed_form_gap
        ),
    )
}

fn uniform_bounds() -> Outcome {
    let v = &study().verdicts;
    check(
        v.sup_moment_spread < UNIFORMITY_TOL && v.increment_spread < UNIFORMITY_TOL,
        format!(
            "E sup|xi|^2 spread {:.4}, increment spread {:.4} (< {UNIFORMITY_TOL})",
            v.sup_moment_spread, v.increment_spread
        ),
    )
}

fn plii(args: &[&str]) -> Result<std::process::Output, String> {
    Command::new(env!("CARGO_BIN_EXE_plii")).args(args).output().map_err(|e| e.to_string())
}

fn dir_listing(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
        files.push((path.file_name().unwrap().to_string_lossy().into_owned(), bytes));
    }
    files.sort();
    Ok(files)
}

fn replay_identical() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let model = fixture_path();
    let model = model.to_str().ok_or("non-UTF-8 path")?;
    let paths = REPLAY_PATHS.to_string();
    let mut checked = Vec::new();
    for command in ["validate", "stationary", "simulate", "limit", "verify"] {
        let first = tmp.path().join(format!("{command}-a"));
        let second = tmp.path().join(format!("{command}-b"));
        let out = plii(&[command, "--model", model, "--N", &paths, "--seed", "5", "--out", first.to_str().unwrap()])?;
        if !out.status.success() {
            return Err(format!("{command} exited with {}", out.status));
        }
        let manifest = first.join("manifest.json");
        let out = plii(&["replay", "--manifest", manifest.to_str().unwrap(), "--out", second.to_str().unwrap()])?;
        if !out.status.success() {
            return Err(format!("replay of {command} exited with {}: {}", out.status, String::from_utf8_lossy(&out.stderr)));
        }
        let (a, b) = (dir_listing(&first)?, dir_listing(&second)?);
        if a != b {
            return Err(format!("replay of {command} produced different files"));
        }
        checked.push(format!("{command} ({} files)", a.len()));
    }
    Ok(format!("byte-identical replays: {}", checked.join(", ")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("switching: stationary law and Poisson equation", switching_identities),
        ("approximation ledger: closed forms and monotone in eps", approximation_ledger),
        ("limit: compound Poisson mean and variance", compound_poisson_moments),
        ("pre-limit: jump counts are Poisson", jump_counts),
        ("convergence: W1 trend and KS at smallest eps", convergence_verdict),
        ("convergence: W1 of B(T) decreasing", characteristic_trend),
        ("perturbation residual is O(eps)", perturbation_bound),
        ("uniform moment and increment bounds", uniform_bounds),
        ("cli: manifest replay is byte-identical", replay_identical),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] C{} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] C{} {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
