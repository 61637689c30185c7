//! Finite-state Markov switching.
//!
//! The switching chain is given by jump intensities `q(x)` and the transition
//! matrix `P` of its embedded chain; its generator is
//! `Q = diag(q) (P - I)`. Self-transitions (`P(x,x) > 0`) are allowed and are
//! simulated as genuine events of the embedded chain.
//!
//! # Poisson equation
//!
//! [`solve_poisson`] returns the unique `h` with `Q h = f` and `pi(h) = 0`,
//! which exists whenever `pi(f) = 0`. Callers building a perturbed test
//! function `phi + eps * phi1` pass `f = (L_avg - L(x)) phi`, so that
//! `Q phi1 = (L_avg - L) phi` and the `O(1)` terms of the perturbed generator
//! collapse onto the averaged one.
//!
//! Internally the system is solved as `(Q - 1 pi) h = f`: the rank-one shift
//! makes the matrix invertible for an irreducible chain, and multiplying by
//! `pi` shows any solution automatically has `pi(h) = 0`.

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rand::Rng;

use crate::error::{Error, Result};

/// Row-sum tolerance used when accepting a transition matrix.
pub const ROW_SUM_TOL: f64 = 1e-9;
/// Tolerance on `pi(f)` for the Poisson equation.
pub const CENTRING_TOL: f64 = 1e-10;

/// Switching chain description: labels, jump intensities and embedded-chain
/// transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchSpec {
    states: Vec<String>,
    q: Vec<f64>,
    p: DMatrix<f64>,
}

impl SwitchSpec {
    /// Structural checks only: shape, `q >= 0` and `P` entries in `[0, 1]`.
    /// Row sums are checked by [`build_generator`].
    pub fn new(states: Vec<String>, q: Vec<f64>, p: Vec<Vec<f64>>) -> Result<Self> {
        let n = states.len();
        if n == 0 {
            return Err(Error::EmptyChain);
        }
        if q.len() != n {
            return Err(Error::Invalid(format!(
                "switching.q has {} entries for {n} states",
                q.len()
            )));
        }
        if p.len() != n || p.iter().any(|row| row.len() != n) {
            return Err(Error::Invalid(format!("switching.P must be {n}x{n}")));
        }
        for (i, &qi) in q.iter().enumerate() {
            if !qi.is_finite() || qi < 0.0 {
                return Err(Error::Invalid(format!("switching.q[{i}] = {qi} must be finite and >= 0")));
            }
        }
        for (i, row) in p.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Invalid(format!("switching.P[{i}][{j}] = {v} is outside [0, 1]")));
                }
            }
        }
        let p = DMatrix::from_fn(n, n, |i, j| p[i][j]);
        Ok(Self { states, q, p })
    }

    /// Single-state chain that never switches.
    pub fn trivial() -> Self {
        Self {
            states: vec!["0".to_string()],
            q: vec![0.0],
            p: DMatrix::from_element(1, 1, 1.0),
        }
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn p_rows(&self) -> Vec<Vec<f64>> {
        (0..self.len())
            .map(|i| self.p.row(i).iter().copied().collect())
            .collect()
    }

    /// Index of the state with the given label.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.states.iter().position(|s| s == label)
    }

    /// Draws the successor of `x` from row `P(x, .)`.
    pub fn next_state<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> usize {
        let n = self.len();
        let total: f64 = self.p.row(x).iter().sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut last_positive = x;
        for j in 0..n {
            let w = self.p[(x, j)];
            if w > 0.0 {
                acc += w;
                last_positive = j;
                if target < acc {
                    return j;
                }
            }
        }
        last_positive
    }
}

/// Generator matrix of a finite continuous-time Markov chain.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix(DMatrix<f64>);

impl GeneratorMatrix {
    /// Accepts a matrix with non-negative off-diagonal entries and zero row
    /// sums (relative tolerance 1e-12).
    pub fn from_matrix(q: DMatrix<f64>) -> Result<Self> {
        if q.nrows() != q.ncols() {
            return Err(Error::Invalid(format!(
                "generator must be square, got {}x{}",
                q.nrows(),
                q.ncols()
            )));
        }
        if q.nrows() == 0 {
            return Err(Error::EmptyChain);
        }
        for i in 0..q.nrows() {
            let mut sum = 0.0;
            let mut scale: f64 = 1.0;
            for j in 0..q.ncols() {
                let v = q[(i, j)];
                if !v.is_finite() {
                    return Err(Error::Invalid(format!("Q[{i}][{j}] is not finite")));
                }
                if i != j && v < 0.0 {
                    return Err(Error::Invalid(format!("off-diagonal Q[{i}][{j}] = {v} is negative")));
                }
                sum += v;
                scale = scale.max(v.abs());
            }
            if sum.abs() > 1e-12 * scale {
                return Err(Error::Invalid(format!("row {i} of Q sums to {sum:e}")));
            }
        }
        Ok(Self(q))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Invalid("generator rows must all have length n".into()));
        }
        Self::from_matrix(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    /// Strongly connected components of the off-diagonal support graph,
    /// each sorted, ordered by smallest member.
    pub fn communicating_classes(&self) -> Vec<Vec<usize>> {
        let n = self.len();
        let mut g = DiGraph::<(), ()>::with_capacity(n, n * n);
        let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
        for i in 0..n {
            for j in 0..n {
                if i != j && self.0[(i, j)] > 0.0 {
                    g.add_edge(nodes[i], nodes[j], ());
                }
            }
        }
        let mut classes: Vec<Vec<usize>> = tarjan_scc(&g)
            .into_iter()
            .map(|c| {
                let mut c: Vec<usize> = c.into_iter().map(|v| v.index()).collect();
                c.sort_unstable();
                c
            })
            .collect();
        classes.sort_by_key(|c| c[0]);
        classes
    }

    pub fn ensure_irreducible(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyChain);
        }
        let classes = self.communicating_classes();
        if classes.len() > 1 {
            return Err(Error::Reducible { components: classes });
        }
        Ok(())
    }

    /// `Q h` for a column vector `h`.
    pub fn apply(&self, h: &[f64]) -> Vec<f64> {
        (&self.0 * DVector::from_column_slice(h)).iter().copied().collect()
    }

    /// `pi Q` for a row vector `pi`.
    pub fn apply_left(&self, pi: &[f64]) -> Vec<f64> {
        (DVector::from_column_slice(pi).transpose() * &self.0)
            .iter()
            .copied()
            .collect()
    }
}

/// `Q = diag(q) (P - I)`. Fails on a row of `P` whose sum deviates from one
/// by more than [`ROW_SUM_TOL`].
pub fn build_generator(spec: &SwitchSpec) -> Result<GeneratorMatrix> {
    let n = spec.len();
    for i in 0..n {
        let sum: f64 = spec.p.row(i).iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::NonStochasticRow { row: i, sum });
        }
    }
    let mut q = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut off = 0.0;
        for j in 0..n {
            if i != j {
                let v = spec.q[i] * spec.p[(i, j)];
                q[(i, j)] = v;
                off += v;
            }
        }
        // diagonal from the off-diagonal mass keeps row sums at rounding level
        q[(i, i)] = -off;
    }
    Ok(GeneratorMatrix(q))
}

/// Stationary law of an irreducible chain.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryLaw(Vec<f64>);

impl StationaryLaw {
    pub fn new(pi: Vec<f64>) -> Result<Self> {
        if pi.is_empty() {
            return Err(Error::EmptyChain);
        }
        if pi.iter().any(|&p| !p.is_finite() || p < 0.0) {
            return Err(Error::Invalid("stationary law has a negative or non-finite entry".into()));
        }
        let sum: f64 = pi.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid(format!("stationary law sums to {sum}")));
        }
        Ok(Self(pi))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `pi(f)`.
    pub fn mean(&self, f: &[f64]) -> f64 {
        self.0.iter().zip(f).map(|(p, v)| p * v).sum()
    }

    /// `|| pi Q ||_inf`.
    pub fn residual(&self, q: &GeneratorMatrix) -> f64 {
        q.apply_left(&self.0).iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Solves `pi Q = 0`, `sum(pi) = 1` for an irreducible generator.
pub fn stationary_distribution(q: &GeneratorMatrix) -> Result<StationaryLaw> {
    q.ensure_irreducible()?;
    let n = q.len();
    if n == 1 {
        return StationaryLaw::new(vec![1.0]);
    }
    let qm = q.matrix();
    // Q^T with its last equation replaced by the normalisation row
    let mut a = qm.transpose();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let mut pi = match a.clone().lu().solve(&rhs) {
        Some(x) if x.iter().all(|v| v.is_finite()) => {
            let lu = a.clone().lu();
            let r = &rhs - &a * &x;
            match lu.solve(&r) {
                Some(dx) => x + dx,
                None => x,
            }
        }
        _ => least_squares_stationary(qm)?,
    };
    for v in pi.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let s = pi.sum();
    pi /= s;
    StationaryLaw::new(pi.iter().copied().collect())
}

fn least_squares_stationary(qm: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = qm.nrows();
    let mut a = DMatrix::zeros(n + 1, n);
    a.view_mut((0, 0), (n, n)).copy_from(&qm.transpose());
    for j in 0..n {
        a[(n, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n + 1);
    rhs[n] = 1.0;
    a.svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::Singular(e.to_string()))
}

/// Solves `Q h = f` with `pi(h) = 0`; see the module docs for the sign
/// convention.
pub fn solve_poisson(q: &GeneratorMatrix, f: &[f64], pi: &StationaryLaw) -> Result<Vec<f64>> {
    let n = q.len();
    if f.len() != n {
        return Err(Error::Dimension { expected: n, got: f.len() });
    }
    if pi.len() != n {
        return Err(Error::Dimension { expected: n, got: pi.len() });
    }
    q.ensure_irreducible()?;
    let centre = pi.mean(f);
    if centre.abs() > CENTRING_TOL {
        return Err(Error::Uncentred(centre));
    }
    if f.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; n]);
    }
    let p = pi.probs();
    let m = DMatrix::from_fn(n, n, |i, j| q.matrix()[(i, j)] - p[j]);
    let lu = m.clone().lu();
    let rhs = DVector::from_column_slice(f);
    let mut h = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("Q - 1 pi is singular".into()))?;
    let r = &rhs - &m * &h;
    if let Some(dh) = lu.solve(&r) {
        h += dh;
    }
    Ok(h.iter().copied().collect())
}

/// Piecewise-constant path of the accelerated switching process
/// `x(t / eps)` on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchPath {
    /// `(jump time, state after)`, starting with `(0, x0)`.
    pub jumps: Vec<(f64, usize)>,
    pub horizon: f64,
    pub eps: f64,
}

impl SwitchPath {
    /// State at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> usize {
        let idx = self.jumps.partition_point(|&(s, _)| s <= t);
        self.jumps[idx.saturating_sub(1)].1
    }

    /// Fraction of `[0, horizon]` spent in each of `n` states.
    pub fn occupation_fractions(&self, n: usize) -> Vec<f64> {
        let mut occ = vec![0.0; n];
        for (k, &(t, x)) in self.jumps.iter().enumerate() {
            let end = self.jumps.get(k + 1).map_or(self.horizon, |j| j.0);
            occ[x] += end - t;
        }
        occ.iter_mut().for_each(|o| *o /= self.horizon);
        occ
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,state")?;
        for &(t, x) in &self.jumps {
            writeln!(w, "{t},{x}")?;
        }
        Ok(())
    }
}

/// Exact simulation of `x(t / eps)`: exponential holding times with rate
/// `q(x) / eps`, successors drawn from `P(x, .)`.
pub fn sample_switch_path<R: Rng + ?Sized>(
    spec: &SwitchSpec,
    eps: f64,
    horizon: f64,
    x0: usize,
    rng: &mut R,
) -> Result<SwitchPath> {
    if !(eps > 0.0) || !(horizon > 0.0) {
        return Err(Error::Argument(format!(
            "need eps > 0 and T > 0, got eps = {eps}, T = {horizon}"
        )));
    }
    if x0 >= spec.len() {
        return Err(Error::Argument(format!("initial state {x0} out of range")));
    }
    let mut jumps = vec![(0.0, x0)];
    let mut t = 0.0;
    let mut x = x0;
    loop {
        let rate = spec.q[x] / eps;
        if rate <= 0.0 {
            break;
        }
        t += exp_sample(rate, rng);
        if t > horizon {
            break;
        }
        x = spec.next_state(x, rng);
        jumps.push((t, x));
    }
    Ok(SwitchPath { jumps, horizon, eps })
}

/// Exponential variate with the given rate by inversion.
#[inline]
pub(crate) fn exp_sample<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    // 1 - U lies in (0, 1]
    -(1.0 - rng.random::<f64>()).ln() / rate
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::path_rng;
    use approx::assert_abs_diff_eq;

    fn spec(q: &[f64], p: &[&[f64]]) -> SwitchSpec {
        let n = q.len();
        SwitchSpec::new(
            (0..n).map(|i| i.to_string()).collect(),
            q.to_vec(),
            p.iter().map(|r| r.to_vec()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn generator_examples() {
        let g = build_generator(&spec(&[1.0, 1.0], &[&[0.0, 1.0], &[1.0, 0.0]])).unwrap();
        assert_eq!(g.matrix(), &DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]));
        let g = build_generator(&spec(&[1.0, 2.0], &[&[0.0, 1.0], &[1.0, 0.0]])).unwrap();
        assert_eq!(g.matrix(), &DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 2.0, -2.0]));
        // q(x) = 2 with a self-loop of weight 1/2: 2 * ((0.5, 0.5) - (1, 0))
        let g = build_generator(&spec(&[2.0, 1.0], &[&[0.5, 0.5], &[1.0, 0.0]])).unwrap();
        assert_eq!(g.matrix()[(0, 0)], -1.0);
        assert_eq!(g.matrix()[(0, 1)], 1.0);
    }

    #[test]
    fn non_stochastic_row_is_named() {
        let s = spec(&[1.0, 1.0], &[&[0.0, 1.0], &[0.5, 0.4]]);
        match build_generator(&s) {
            Err(Error::NonStochasticRow { row, .. }) => assert_eq!(row, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stationary_examples() {
        let pi = stationary_distribution(&GeneratorMatrix::from_rows(&[vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap())
            .unwrap();
        assert_abs_diff_eq!(pi.probs()[0], 0.5, epsilon = 1e-14);
        let pi = stationary_distribution(&GeneratorMatrix::from_rows(&[vec![-1.0, 1.0], vec![2.0, -2.0]]).unwrap())
            .unwrap();
        assert_abs_diff_eq!(pi.probs()[0], 2.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(pi.probs()[1], 1.0 / 3.0, epsilon = 1e-14);
        let cyc = build_generator(&spec(
            &[1.0, 1.0, 1.0],
            &[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0]],
        ))
        .unwrap();
        let pi = stationary_distribution(&cyc).unwrap();
        for p in pi.probs() {
            assert_abs_diff_eq!(*p, 1.0 / 3.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn reducible_chain_lists_components() {
        let g = GeneratorMatrix::from_rows(&[
            vec![-1.0, 1.0, 0.0],
            vec![1.0, -1.0, 0.0],
            vec![0.0, 0.0, 0.0],
        ])
        .unwrap();
        match stationary_distribution(&g) {
            Err(Error::Reducible { components }) => assert_eq!(components, vec![vec![0, 1], vec![2]]),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            GeneratorMatrix::from_matrix(DMatrix::zeros(0, 0)),
            Err(Error::EmptyChain)
        ));
    }

    #[test]
    fn poisson_examples() {
        let q = GeneratorMatrix::from_rows(&[vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let pi = stationary_distribution(&q).unwrap();
        assert_eq!(solve_poisson(&q, &[0.0, 0.0], &pi).unwrap(), vec![0.0, 0.0]);
        let h = solve_poisson(&q, &[1.0, -1.0], &pi).unwrap();
        assert_abs_diff_eq!(h[0], -0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(h[1], 0.5, epsilon = 1e-14);

        let q = GeneratorMatrix::from_rows(&[vec![-2.0, 2.0], vec![1.0, -1.0]]).unwrap();
        let pi = stationary_distribution(&q).unwrap();
        assert_abs_diff_eq!(pi.probs()[0], 1.0 / 3.0, epsilon = 1e-14);
        let h = solve_poisson(&q, &[2.0, -1.0], &pi).unwrap();
        assert_abs_diff_eq!(h[0], -2.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(h[1], 1.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn uncentred_rhs_is_rejected() {
        let q = GeneratorMatrix::from_rows(&[vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let pi = stationary_distribution(&q).unwrap();
        match solve_poisson(&q, &[1.0, 0.0], &pi) {
            Err(Error::Uncentred(c)) => assert_abs_diff_eq!(c, 0.5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn frozen_paths() {
        let s = spec(&[0.0, 0.0], &[&[0.0, 1.0], &[1.0, 0.0]]);
        let p = sample_switch_path(&s, 0.1, 1.0, 1, &mut path_rng(1, 0, 0)).unwrap();
        assert_eq!(p.jumps, vec![(0.0, 1)]);
        let s = spec(&[3.0], &[&[1.0]]);
        let p = sample_switch_path(&s, 0.1, 1.0, 0, &mut path_rng(1, 0, 0)).unwrap();
        assert!(p.jumps.iter().all(|&(_, x)| x == 0));
    }

    #[test]
    fn mean_jump_count() {
        // q = 2, eps = 0.1, T = 1: Poisson(20) jump counts
        let s = spec(&[2.0, 2.0], &[&[0.0, 1.0], &[1.0, 0.0]]);
        let n = 10_000;
        let counts: Vec<f64> = (0..n)
            .map(|i| {
                let p = sample_switch_path(&s, 0.1, 1.0, 0, &mut path_rng(5, 0, i)).unwrap();
                (p.jumps.len() - 1) as f64
            })
            .collect();
        let mean = counts.iter().sum::<f64>() / n as f64;
        let se = (20.0f64 / n as f64).sqrt();
        assert!((mean - 20.0).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn occupation_matches_pi() {
        let s = spec(
            &[1.0, 2.0, 0.5],
            &[&[0.0, 0.7, 0.3], &[0.5, 0.0, 0.5], &[0.2, 0.8, 0.0]],
        );
        let pi = stationary_distribution(&build_generator(&s).unwrap()).unwrap();
        let path = sample_switch_path(&s, 0.001, 1.0, 0, &mut path_rng(11, 0, 0)).unwrap();
        let occ = path.occupation_fractions(3);
        let gap = occ
            .iter()
            .zip(pi.probs())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(gap < 0.02, "occupation {occ:?} vs pi {:?}", pi.probs());
    }

    #[test]
    fn path_is_deterministic() {
        let s = spec(&[1.0, 2.0], &[&[0.0, 1.0], &[1.0, 0.0]]);
        let a = sample_switch_path(&s, 0.05, 2.0, 0, &mut path_rng(3, 1, 4)).unwrap();
        let b = sample_switch_path(&s, 0.05, 2.0, 0, &mut path_rng(3, 1, 4)).unwrap();
        assert_eq!(a, b);
        assert!(a.jumps.windows(2).all(|w| w[0].0 < w[1].0));
        assert_eq!(a.state_at(0.0), 0);
    }
}
