use plii_sim::config::{LoadedModel, ModelConfig};
use plii_sim::metrics::ks_one_sample;
use plii_sim::rng::path_rng;
use plii_sim::simulate::{predictable_characteristics, simulate_prelimit, EventKind};

fn model(json: &str) -> LoadedModel {
    ModelConfig::parse(json).and_then(|c| c.build()).expect("test model builds")
}

fn single_state(component: &str, rho: f64, offset: f64) -> LoadedModel {
    model(&format!(
        r#"{{"schema": "plii-model/1", "dimension": 1,
            "switching": {{"states": ["s"], "q": [1], "P": [[1]]}},
            "jumps": [[{component}]],
            "drift": {{"rho": [{rho}], "d": [{{"offset": {offset}}}]}}}}"#
    ))
}

fn fixture() -> LoadedModel {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/two_state.json");
    ModelConfig::load(&path).and_then(|c| c.build()).expect("fixture loads")
}

#[test]
fn constant_rate_gaps_are_exponential() {
    let rate = 3.0;
    let m = single_state(&format!(r#"{{"family": "point", "params": {{"value": 1}}, "rate": {rate}}}"#), 0.0, 0.0);
    let mut rng = path_rng(1, 0, 0);
    let t = simulate_prelimit(&m.spec, &m.model, 0.5, 4000.0, &[0.0], 0, &mut rng).unwrap();
    let jumps: Vec<f64> = t.times.iter().zip(&t.kinds).filter(|(_, k)| **k == EventKind::BigJump).map(|(s, _)| *s).collect();
    assert!(jumps.len() > 10_000, "{}", jumps.len());
    let gaps: Vec<f64> = std::iter::once(jumps[0]).chain(jumps.windows(2).map(|w| w[1] - w[0])).collect();
    let (d, p) = ks_one_sample(&gaps, |x| 1.0 - (-rate * x).exp()).unwrap();
    assert!(p >= 0.01, "D = {d}, p = {p}");
}

/// Big-jump counts match the integrated intensity `1 + min(|u|, 1)` along
/// the realised paths.
#[test]
fn thinning_reproduces_state_dependent_rate() {
    let m = single_state(r#"{"family": "point", "params": {"value": 0}, "rate": 1, "kappa": 1, "ucap": 1}"#, 1.0, 1.0);
    let (mut count, mut compensator) = (0usize, 0.0);
    for i in 0..20_000 {
        let mut rng = path_rng(2, 0, i);
        let t = simulate_prelimit(&m.spec, &m.model, 0.05, 1.0, &[-0.5], 0, &mut rng).unwrap();
        let (mut last, mut u) = (0.0, t.xi0[0]);
        for k in 0..t.len() {
            compensator += (1.0 + u.abs().min(1.0)) * (t.times[k] - last);
            last = t.times[k];
            u = t.xi_at_event(k)[0];
            count += (t.kinds[k] == EventKind::BigJump) as usize;
        }
        compensator += (1.0 + u.abs().min(1.0)) * (t.horizon - last);
    }
    let ratio = count as f64 / compensator;
    assert!(compensator > 20_000.0);
    assert!((ratio - 1.0).abs() < 0.02, "count {count}, compensator {compensator}");
}

#[test]
fn characteristics_are_monotone_and_lipschitz() {
    let m = fixture();
    let grid: Vec<f64> = (0..=64).map(|k| k as f64 / 64.0).collect();
    let bound = (-200..=200)
        .flat_map(|k| {
            let u = [k as f64 / 10.0];
            (0..m.model.n_states()).map(move |x| (u, x))
        })
        .map(|(u, x)| m.model.kernel_mean(&u, x).drift[0].abs())
        .fold(0.0f64, f64::max);
    for i in 0..50 {
        let mut rng = path_rng(3, 0, i);
        let t = simulate_prelimit(&m.spec, &m.model, 0.05, 1.0, &m.xi0, m.x0, &mut rng).unwrap();
        let ch = predictable_characteristics(&t, &m.model, &grid).unwrap();
        for k in 1..grid.len() {
            let dt = grid[k] - grid[k - 1];
            assert!((ch.b[k][0] - ch.b[k - 1][0]).abs() <= bound * dt + 1e-12);
            assert!(ch.c[k][0] >= ch.c[k - 1][0]);
            for g in 0..3 {
                assert!(ch.gamma_g[k][g] >= ch.gamma_g[k - 1][g]);
            }
        }
    }
}

/// Fast switching between drifts 1 and 3 with equal weights averages to 2.
#[test]
fn fast_switching_averages_the_drift() {
    let m = model(
        r#"{"schema": "plii-model/1", "dimension": 1,
            "switching": {"states": ["slow", "fast"], "q": [1, 1], "P": [[0, 1], [1, 0]]},
            "jumps": [[], []],
            "drift": {"rho": [1, 1], "d": [{"offset": 1}, {"offset": 3}]}}"#,
    );
    let mut rng = path_rng(4, 0, 0);
    let t = simulate_prelimit(&m.spec, &m.model, 0.001, 1.0, &[0.0], 0, &mut rng).unwrap();
    let ch = predictable_characteristics(&t, &m.model, &[1.0]).unwrap();
    assert!((ch.b[0][0] - 2.0).abs() < 0.05, "B(T) = {}", ch.b[0][0]);
    assert!(t.count(EventKind::Switch) > 100);
}
