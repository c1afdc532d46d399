//! Deterministic block-parallel replication.
//!
//! Replication indices are split into fixed-size consecutive blocks. Each
//! block is processed sequentially in index order (every replication drawing
//! its own derived RNG stream), blocks may run on any worker, and the block
//! results are combined by a pairwise tree in block order. Worker count and
//! scheduling therefore never affect the result, bit for bit.

use rayon::prelude::*;

/// Default replications per block.
pub const DEFAULT_BLOCK: u64 = 4096;

/// Runs `block_fn` over consecutive index ranges covering `0..reps` and
/// merges the results pairwise in block order. Returns `None` when `reps`
/// is zero.
pub fn map_reduce_blocks<T, F, M>(reps: u64, block_size: u64, block_fn: F, merge: M) -> Option<T>
where
    T: Send,
    F: Fn(std::ops::Range<u64>) -> T + Sync,
    M: Fn(T, T) -> T,
{
    if reps == 0 {
        return None;
    }
    let bs = block_size.max(1);
    let n_blocks = reps.div_ceil(bs);
    let results: Vec<T> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let lo = b * bs;
            let hi = (lo + bs).min(reps);
            block_fn(lo..hi)
        })
        .collect();
    pairwise_merge(results, merge)
}

/// Bottom-up pairwise combination preserving element order.
pub fn pairwise_merge<T, M>(mut items: Vec<T>, merge: M) -> Option<T>
where
    M: Fn(T, T) -> T,
{
    if items.is_empty() {
        return None;
    }
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(merge(a, b)),
                None => next.push(a),
            }
        }
        items = next;
    }
    items.pop()
}

/// Running scalar statistics for a Monte Carlo mean.
#[derive(Debug, Clone, Copy, Default)]
pub struct BlockStats {
    pub n: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl BlockStats {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(a: Self, b: Self) -> Self {
        BlockStats {
            n: a.n + b.n,
            sum: a.sum + b.sum,
            sum_sq: a.sum_sq + b.sum_sq,
        }
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.sum / self.n as f64
        }
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        let n = self.n as f64;
        let var = (self.sum_sq - self.sum * self.sum / n).max(0.0) / (n - 1.0);
        (var / n).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covers_every_index_once() {
        let total = map_reduce_blocks(
            10_001,
            128,
            |range| range.map(|i| i as u128).sum::<u128>(),
            |a, b| a + b,
        )
        .unwrap();
        assert_eq!(total, 10_001u128 * 10_000 / 2);
    }

    #[test]
    fn independent_of_worker_count() {
        let run = || {
            map_reduce_blocks(
                5000,
                64,
                |range| {
                    let mut s = BlockStats::default();
                    for i in range {
                        let mut rng = crate::seed::replication_rng(9, i);
                        s.push(rand::Rng::gen::<f64>(&mut rng));
                    }
                    s
                },
                BlockStats::merge,
            )
            .unwrap()
        };
        let a = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(run);
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(8)
            .build()
            .unwrap()
            .install(run);
        assert_eq!(a.sum.to_bits(), b.sum.to_bits());
        assert_eq!(a.sum_sq.to_bits(), b.sum_sq.to_bits());
    }

    #[test]
    fn pairwise_merge_keeps_order() {
        let strings: Vec<String> = (0..7).map(|i| i.to_string()).collect();
        let merged = pairwise_merge(strings, |a, b| format!("{a}{b}")).unwrap();
        assert_eq!(merged, "0123456");
    }
}
