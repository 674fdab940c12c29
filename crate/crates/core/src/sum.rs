//! Deterministic chunked reduction used by the expectation backends.
//!
//! Sums are accumulated in fixed-size chunks whose partial totals are then
//! summed in index order. The reduction order is therefore independent of how
//! the terms were produced, which keeps every result bit-stable for a given
//! seed, and the two-level accumulation also limits round-off growth.

pub const CHUNK: usize = 1024;

/// Chunked accumulator for callers that produce terms one at a time inside a
/// visitor.
#[derive(Default)]
pub struct ChunkedAcc {
    partials: Vec<f64>,
    acc: f64,
    count: usize,
}

impl ChunkedAcc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, term: f64) {
        self.acc += term;
        self.count += 1;
        if self.count == CHUNK {
            self.partials.push(self.acc);
            self.acc = 0.0;
            self.count = 0;
        }
    }

    pub fn finish(mut self) -> f64 {
        if self.count > 0 {
            self.partials.push(self.acc);
        }
        self.partials.into_iter().sum()
    }
}
