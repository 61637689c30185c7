//! Path-indexed ensemble execution.
//!
//! With the `parallel` feature (default) paths run on the rayon pool;
//! without it they run in a plain loop. Both variants return results in
//! path-index order, so downstream aggregation is identical.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Runs `f(0..n)` and collects the results in index order.
pub fn run_paths<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        run_paths_parallel(n, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_paths_sequential(n, f)
    }
}

/// Fallible variant of [`run_paths`]; the first error by path index wins.
pub fn try_run_paths<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    run_paths(n, f).into_iter().collect()
}

pub fn run_paths_sequential<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn run_paths_parallel<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_by_index() {
        let v = run_paths(1000, |i| i * 3);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 3 * i));
        assert_eq!(v, run_paths_sequential(1000, |i| i * 3));
    }

    #[test]
    fn first_error_by_index() {
        let r: Result<Vec<usize>, usize> =
            try_run_paths(100, |i| if i % 30 == 29 { Err(i) } else { Ok(i) });
        assert_eq!(r, Err(29));
    }
}
