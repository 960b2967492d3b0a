//! Data-parallel loops with a sequential fallback.
//!
//! With the `parallel` feature (default) work is spread over the rayon
//! global pool; without it, or with [`Execution::Sequential`], loops run on
//! the calling thread. Results never depend on the choice: every index is
//! computed independently and written to its own slot.

/// Loops shorter than this run on the calling thread even in parallel mode;
/// dispatch would cost more than the work.
pub const MIN_PARALLEL_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Calls `f(&mut scratch, i, &mut out[i])` for every index, creating one
/// scratch value per worker with `init`.
pub fn fill_with<T, W, I, F>(execution: Execution, out: &mut [T], init: I, f: F)
where
    T: Send,
    I: Fn() -> W + Sync + Send,
    F: Fn(&mut W, usize, &mut T) + Sync + Send,
{
    match execution {
        #[cfg(feature = "parallel")]
        Execution::Parallel if out.len() >= MIN_PARALLEL_LEN => {
            use rayon::prelude::*;
            out.par_iter_mut()
                .enumerate()
                .for_each_init(&init, |scratch, (i, slot)| f(scratch, i, slot));
        }
        _ => {
            let mut scratch = init();
            for (i, slot) in out.iter_mut().enumerate() {
                f(&mut scratch, i, slot);
            }
        }
    }
}

/// `(0..n).map(f).collect()`, in index order.
pub fn map_indexed<R, F>(execution: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match execution {
        #[cfg(feature = "parallel")]
        Execution::Parallel if n >= MIN_PARALLEL_LEN => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_agree() {
        let mut a = vec![0.0; 1000];
        let mut b = vec![0.0; 1000];
        let work = |_: &mut (), i: usize, x: &mut f64| *x = (i as f64).sqrt().sin();
        fill_with(Execution::Sequential, &mut a, || (), work);
        fill_with(Execution::Parallel, &mut b, || (), work);
        assert_eq!(a, b);
        assert_eq!(
            map_indexed(Execution::Sequential, 50, |i| i * i),
            map_indexed(Execution::Parallel, 50, |i| i * i)
        );
    }
}
