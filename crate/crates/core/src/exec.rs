//! Chunked map-reduce over sample indices.
//!
//! Samples are split into chunks of [`CHUNK`] consecutive indices. Each chunk is
//! folded sequentially into a zeroed buffer; the chunk buffers are then summed
//! with a fixed pairwise tree. The partition and the tree shape depend only on
//! `n`, so the sequential and rayon paths produce the same bits.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub const CHUNK: usize = 256;

/// Execution policy for per-sample reductions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        {
            Exec::Parallel
        }
        #[cfg(not(feature = "parallel"))]
        {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// Sums `width`-long accumulators produced by `fold` over `0..n`.
    pub fn sum_chunks<F>(self, n: usize, width: usize, fold: F) -> Vec<f64>
    where
        F: Fn(&mut [f64], usize) + Sync + Send,
    {
        let chunks = n.div_ceil(CHUNK);
        let run = |c: usize| {
            let mut acc = vec![0.0; width];
            let end = ((c + 1) * CHUNK).min(n);
            for i in c * CHUNK..end {
                fold(&mut acc, i);
            }
            acc
        };
        let partials: Vec<Vec<f64>> = match self {
            Exec::Sequential => (0..chunks).map(run).collect(),
            #[cfg(feature = "parallel")]
            Exec::Parallel => (0..chunks).into_par_iter().map(run).collect(),
        };
        pairwise_merge(partials, width)
    }

    /// Maps `f` over `0..n`, preserving index order in the output.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Exec::Sequential => (0..n).map(f).collect(),
            #[cfg(feature = "parallel")]
            Exec::Parallel => (0..n).into_par_iter().map(f).collect(),
        }
    }
}

/// Elementwise sum of equal-length buffers in a fixed pairwise order.
pub fn pairwise_merge(mut parts: Vec<Vec<f64>>, width: usize) -> Vec<f64> {
    if parts.is_empty() {
        return vec![0.0; width];
    }
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += *y;
                }
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop().unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_range_gives_zeros() {
        assert_eq!(Exec::Sequential.sum_chunks(0, 3, |_, _| {}), vec![0.0; 3]);
    }

    #[test]
    fn sums_match_plain_loop_closely() {
        let n = 10_001;
        let got = Exec::default().sum_chunks(n, 2, |acc, i| {
            acc[0] += i as f64;
            acc[1] += 1.0;
        });
        assert_eq!(got[0], (n * (n - 1) / 2) as f64);
        assert_eq!(got[1], n as f64);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let vals: Vec<f64> = (0..5000).map(|i| ((i as f64) * 0.37).sin() * 1e3).collect();
        let f = |acc: &mut [f64], i: usize| acc[0] += vals[i] * vals[(i * 7) % vals.len()];
        let a = Exec::Sequential.sum_chunks(vals.len(), 1, f);
        let b = Exec::Parallel.sum_chunks(vals.len(), 1, f);
        assert_eq!(a[0].to_bits(), b[0].to_bits());
    }
}
