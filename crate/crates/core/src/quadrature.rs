//! Fixed-order Gauss–Legendre rules, cached per order.

use gauss_quad::GaussLegendre;
use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex, OnceLock};

fn rule(order: usize) -> Arc<GaussLegendre> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussLegendre>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    guard
        .entry(order)
        .or_insert_with(|| {
            let degree = NonZeroUsize::new(order.max(1)).expect("order is positive");
            Arc::new(GaussLegendre::new(degree))
        })
        .clone()
}

/// Integrate `f` over `[a, b]` with an `order`-point Gauss–Legendre rule.
pub fn gauss_legendre<F: FnMut(f64) -> f64>(order: usize, a: f64, b: f64, f: F) -> f64 {
    rule(order).integrate(a, b, f)
}
