//! Data-parallel helpers. With the `parallel` feature the closures run on the
//! rayon pool; without it they run sequentially. Output order always matches
//! input order, so reductions over the collected values are bit-stable.

/// Map `$f` over the elements of `$slice`, collecting into a `Vec`.
macro_rules! par_map {
    ($slice:expr, $f:expr) => {{
        #[cfg(feature = "parallel")]
        {
            use rayon::iter::{IntoParallelRefIterator, ParallelIterator};
            $slice.par_iter().map($f).collect::<Vec<_>>()
        }
        #[cfg(not(feature = "parallel"))]
        {
            $slice.iter().map($f).collect::<Vec<_>>()
        }
    }};
}

/// Fallible map; the first error in input order wins.
macro_rules! par_try_map {
    ($slice:expr, $f:expr) => {{
        let results = $crate::par::par_map!($slice, $f);
        results
            .into_iter()
            .collect::<$crate::error::Result<Vec<_>>>()
    }};
}

pub(crate) use par_map;
pub(crate) use par_try_map;

/// Maximum over a slice, ignoring nothing: NaN propagates as NaN.
pub(crate) fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(0.0_f64, |acc, v| {
        if v.is_nan() || acc.is_nan() {
            f64::NAN
        } else {
            acc.max(v)
        }
    })
}

pub(crate) fn min_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::INFINITY, f64::min)
}
