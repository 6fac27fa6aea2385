//! Switch between the rayon data-parallel path and the plain sequential loop.
//!
//! Without the `parallel` feature every request silently runs sequentially, so
//! callers never need their own `cfg` gates.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parallelism {
    Sequential,
    #[default]
    Rayon,
}

impl Parallelism {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Rayon
    }
}

/// Runs `f` over consecutive `chunk`-sized pieces of `data`, passing the chunk index.
/// `init` builds per-worker scratch state.
pub(crate) fn chunks_mut_init<T, S, I, F>(
    data: &mut [T],
    chunk: usize,
    par: Parallelism,
    init: I,
    f: F,
) where
    T: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if par.is_parallel() {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each_init(&init, |state, (i, c)| f(state, i, c));
        return;
    }
    let _ = par;
    let mut state = init();
    for (i, c) in data.chunks_mut(chunk).enumerate() {
        f(&mut state, i, c);
    }
}

pub(crate) fn chunks_mut<T, F>(data: &mut [T], chunk: usize, par: Parallelism, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    chunks_mut_init(data, chunk, par, || (), |_, i, c| f(i, c));
}
