//! Shared fixtures for the criterion benches.

use latreg_core::synthetic::sample_dataset;
use latreg_core::{Generator, Record, SyntheticSpec};

pub struct Fixture {
    pub g: Generator,
    pub records: Vec<Record>,
}

/// Reference generator and `n` sampled records.
pub fn fixture(n: usize) -> Fixture {
    let g = Generator::new(SyntheticSpec::reference()).expect("reference spec is valid");
    let records = sample_dataset(&g, n, 1).expect("n >= 1");
    Fixture { g, records }
}

/// A fixed scrambled permutation of `0..n`.
pub fn scrambled(n: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    let mut state = 0x9e37_79b9_7f4a_7c15u64;
    for i in (1..n).rev() {
        state = latreg_core::seed::mix64(state);
        v.swap(i, (state % (i as u64 + 1)) as usize);
    }
    v
}
