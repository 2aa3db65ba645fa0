//! Parallel iteration with a sequential fallback.
//!
//! With the `parallel` feature (default) this re-exports rayon's prelude so
//! call sites use `into_par_iter`/`par_iter` directly. Without it, the same
//! method names resolve to thin wrappers over standard iterators, so every
//! call site compiles unchanged and runs sequentially.

#[cfg(feature = "parallel")]
pub use rayon::prelude::*;

#[cfg(feature = "parallel")]
/// Runs `f` inside a rayon pool of `jobs` threads (`None` = rayon default).
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("thread pool")
            .install(f),
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
/// Sequential build: `jobs` is accepted for interface parity and ignored.
pub fn with_jobs<T>(jobs: Option<usize>, f: impl FnOnce() -> T) -> T {
    let _ = jobs;
    f()
}

#[cfg(not(feature = "parallel"))]
mod sequential {
    /// Sequential stand-in for rayon's `IntoParallelIterator`.
    pub trait IntoParallelIterator: Sized {
        type Iter: Iterator<Item = Self::Item>;
        type Item;

        fn into_par_iter(self) -> Self::Iter;
    }

    impl<I: IntoIterator> IntoParallelIterator for I {
        type Iter = I::IntoIter;
        type Item = I::Item;

        fn into_par_iter(self) -> Self::Iter {
            self.into_iter()
        }
    }

    /// Sequential stand-in for rayon's `IntoParallelRefIterator`.
    pub trait IntoParallelRefIterator<'a> {
        type Iter: Iterator<Item = Self::Item>;
        type Item: 'a;

        fn par_iter(&'a self) -> Self::Iter;
    }

    impl<'a, T: 'a, C> IntoParallelRefIterator<'a> for C
    where
        &'a C: IntoIterator<Item = &'a T>,
    {
        type Iter = <&'a C as IntoIterator>::IntoIter;
        type Item = &'a T;

        fn par_iter(&'a self) -> Self::Iter {
            self.into_iter()
        }
    }
}

#[cfg(not(feature = "parallel"))]
pub use sequential::{IntoParallelIterator, IntoParallelRefIterator};

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_collect_preserves_order() {
        let squares: Vec<u64> = (0u64..100).into_par_iter().map(|x| x * x).collect();
        assert_eq!(squares[7], 49);
        assert_eq!(squares.len(), 100);
    }

    #[test]
    fn with_jobs_runs_closure() {
        let v = with_jobs(Some(2), || (0u64..10).into_par_iter().map(|x| x + 1).sum::<u64>());
        assert_eq!(v, 55);
    }
}
