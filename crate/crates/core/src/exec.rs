//! Execution backend: the same data-parallel loops can run on rayon or on
//! the current thread.
//!
//! Results are always collected in entity order and reduced sequentially,
//! so the two backends — and any rayon pool size — produce bit-identical
//! floating-point output. Compiling without the `parallel` feature removes
//! the rayon dependency entirely; [`Parallelism::Rayon`] then degrades to
//! the sequential path.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Which backend to run data-parallel loops on.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Parallelism {
    /// Everything on the calling thread.
    Sequential,
    /// Independent work items on the current rayon pool (sequential when the
    /// `parallel` feature is compiled out).
    Rayon,
}

impl Default for Parallelism {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Parallelism::Rayon
        } else {
            Parallelism::Sequential
        }
    }
}

/// Map `f` over `0..n`, returning results in index order.
pub fn ordered_map<T, F>(par: Parallelism, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match par {
        Parallelism::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        Parallelism::Rayon => (0..n).into_par_iter().map(f).collect(),
        #[cfg(not(feature = "parallel"))]
        Parallelism::Rayon => (0..n).map(f).collect(),
    }
}

/// Apply `f` to every element of `items` (with its index), in place.
pub fn for_each_mut<T, F>(par: Parallelism, items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    match par {
        Parallelism::Sequential => {
            for (i, item) in items.iter_mut().enumerate() {
                f(i, item);
            }
        }
        #[cfg(feature = "parallel")]
        Parallelism::Rayon => {
            items.par_iter_mut().enumerate().for_each(|(i, item)| f(i, item));
        }
        #[cfg(not(feature = "parallel"))]
        Parallelism::Rayon => {
            for (i, item) in items.iter_mut().enumerate() {
                f(i, item);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backends_agree_and_preserve_order() {
        let seq = ordered_map(Parallelism::Sequential, 100, |i| (i as f64).sqrt());
        let par = ordered_map(Parallelism::Rayon, 100, |i| (i as f64).sqrt());
        assert_eq!(seq, par);
        assert_eq!(seq[81], 9.0);
    }

    #[test]
    fn for_each_mut_touches_every_slot() {
        let mut a = vec![0usize; 64];
        let mut b = vec![0usize; 64];
        for_each_mut(Parallelism::Sequential, &mut a, |i, x| *x = i * i);
        for_each_mut(Parallelism::Rayon, &mut b, |i, x| *x = i * i);
        assert_eq!(a, b);
    }
}
