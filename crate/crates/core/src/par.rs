//! Row-parallel helpers. Each output row is owned by exactly one worker and
//! computed in a fixed order, so the thread count never changes results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

const MIN_ROWS: usize = 64;

pub(crate) fn for_each_row<T, F>(data: &mut [T], width: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(width)
            .with_min_len(MIN_ROWS)
            .enumerate()
            .for_each(|(i, r)| f(i, r));
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = MIN_ROWS;
        for (i, r) in data.chunks_mut(width).enumerate() {
            f(i, r);
        }
    }
}
