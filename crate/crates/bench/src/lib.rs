//! Shared inputs for the benchmarks in `benches/`.

use rshaze::{Element, Tensor};

/// Deterministic values in `[0, 1]` with no special structure.
pub fn pattern<T: Element>(dims: [usize; 4]) -> Tensor<T> {
    let mut i = 0u64;
    Tensor::from_fn(dims, |_| {
        i = i.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        T::lit((i >> 11) as f64 / (1u64 << 53) as f64)
    })
}
