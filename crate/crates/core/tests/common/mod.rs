#![allow(dead_code)]

use equistop::{Chain, DiscountFn};
use rand::Rng;

/// Random irreducible chain: a cycle through every state plus sparse extra
/// jumps, values uniform on `[0, 100)`.
pub fn random_chain<R: Rng>(rng: &mut R, n: usize, max_rate: f64) -> Chain {
    let values: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..100.0)).collect();
    let mut rates = vec![vec![0.0; n]; n];
    for (x, row) in rates.iter_mut().enumerate() {
        if n > 1 {
            row[(x + 1) % n] = rng.random_range(0.1..max_rate);
        }
        for (y, r) in row.iter_mut().enumerate() {
            if y != x && *r == 0.0 && rng.random_bool(0.4) {
                *r = rng.random_range(0.1..max_rate);
            }
        }
    }
    // keep every holding rate at most max_rate
    for row in rates.iter_mut() {
        let total: f64 = row.iter().sum();
        if total > max_rate {
            row.iter_mut().for_each(|r| *r *= max_rate / total);
        }
    }
    Chain::from_rates(values, &rates).unwrap()
}

pub fn random_hyperbolic<R: Rng>(rng: &mut R) -> DiscountFn {
    DiscountFn::hyperbolic(rng.random_range(0.5..5.0)).unwrap()
}

pub fn random_gamma_half<R: Rng>(rng: &mut R) -> DiscountFn {
    DiscountFn::generalized_hyperbolic(rng.random_range(0.5..5.0), 0.5).unwrap()
}

/// Stopping region of the classical problem `sup_τ E[e^{-rτ} X_τ]`, by value
/// iteration on the uniformized jump chain. A state stops when its value
/// beats continuation by more than `tol`.
pub fn value_iteration_region(chain: &Chain, rate: f64, tol: f64) -> Vec<bool> {
    let n = chain.len();
    let lam = chain.max_rate().max(1e-12);
    let step = lam / (lam + rate);
    let f = chain.values();
    let cont = |v: &[f64], x: usize| {
        let stay = 1.0 - chain.holding_rate(x) / lam;
        let moved: f64 = (0..n).filter(|&y| y != x).map(|y| chain.rate(x, y) / lam * v[y]).sum();
        step * (stay * v[x] + moved)
    };
    let mut v = f.to_vec();
    loop {
        let next: Vec<f64> = (0..n).map(|x| f[x].max(cont(&v, x))).collect();
        let change = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if change < 1e-14 * chain.max_value().max(1.0) {
            break;
        }
    }
    (0..n).map(|x| f[x] > cont(&v, x) + tol).collect()
}
