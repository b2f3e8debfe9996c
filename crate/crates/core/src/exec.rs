//! Execution policy for the data-parallel loops in this crate.
//!
//! Batch-shaped work (mask construction over a dataset, Monte-Carlo draws,
//! per-sample gradients, SSIM windows, dilation rows) goes through [`Exec`].
//! With the `parallel` feature enabled the parallel arm uses rayon; without
//! it every call runs sequentially and produces the same results, since all
//! reductions here are order-preserving collects.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// True when this policy will actually fan out across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Order-preserving map over an index range.
    pub fn map_range<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Order-preserving map over a slice.
    pub fn map<I, T, F>(self, items: &[I], f: F) -> Vec<T>
    where
        I: Sync,
        T: Send,
        F: Fn(&I) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Fills `out` in row-sized chunks; `f` receives the row index and the row.
    pub fn for_each_row<T, F>(self, out: &mut [T], row_len: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        if row_len == 0 {
            return;
        }
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            out.par_chunks_mut(row_len)
                .enumerate()
                .for_each(|(y, row)| f(y, row));
            return;
        }
        out.chunks_mut(row_len)
            .enumerate()
            .for_each(|(y, row)| f(y, row));
    }

    /// Runs a fallible map and returns the first error in index order.
    pub fn try_map_range<T, E, F>(self, n: usize, f: F) -> Result<Vec<T>, E>
    where
        T: Send,
        E: Send,
        F: Fn(usize) -> Result<T, E> + Sync + Send,
    {
        self.map_range(n, f).into_iter().collect()
    }
}

/// Runs `f` with a policy matching `workers`: sequential for 0 or 1,
/// otherwise parallel inside a dedicated pool of that many threads.
pub fn with_workers<R, F>(workers: usize, f: F) -> R
where
    R: Send,
    F: FnOnce(Exec) -> R + Send,
{
    #[cfg(feature = "parallel")]
    if workers > 1 {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            return pool.install(|| f(Exec::Parallel));
        }
    }
    let _ = workers;
    f(Exec::Sequential)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_policies_agree() {
        let a = Exec::Sequential.map_range(1000, |i| (i * i) % 97);
        let b = Exec::Parallel.map_range(1000, |i| (i * i) % 97);
        assert_eq!(a, b);
    }

    #[test]
    fn worker_count_selects_policy() {
        assert_eq!(with_workers(1, |e| e), Exec::Sequential);
        let e = with_workers(3, |e| e);
        assert_eq!(e.is_parallel(), cfg!(feature = "parallel"));
    }

    #[test]
    fn rows_are_filled_in_place() {
        let mut buf = vec![0usize; 12];
        Exec::Parallel.for_each_row(&mut buf, 4, |y, row| row.iter_mut().for_each(|v| *v = y));
        assert_eq!(buf, vec![0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2]);
    }
}
