#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use rand::SeedableRng;
pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut TestRng, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0))
}

fn orthogonal(rng: &mut TestRng, m: usize) -> DMatrix<f64> {
    gaussian_matrix(rng, m).qr().q()
}

/// `P = s·(U diag(σ) Uᵀ + K)` with `σ ∈ [1, 30]`, a skew part `K` and an
/// overall scale `s` log-uniform in `[1e-2, 1e2]`; redrawn until
/// `cond(P) ≤ 1e3`.
pub fn random_coercive(rng: &mut TestRng, m: usize) -> DMatrix<f64> {
    loop {
        let u = orthogonal(rng, m);
        let sigma = DMatrix::from_diagonal(&DVector::from_fn(m, |_, _| rng.gen_range(1.0..30.0)));
        let g = gaussian_matrix(rng, m) * rng.gen_range(0.0..10.0);
        let skew = (&g - g.transpose()) * 0.5;
        let scale = 10f64.powf(rng.gen_range(-2.0..2.0));
        let p = (&u * sigma * u.transpose() + skew) * scale;
        let sv = p.clone().singular_values();
        if sv.max() / sv.min() <= 1e3 {
            return p;
        }
    }
}

/// Direction uniform on the sphere, radius log-uniform in `[1e-3, max_norm]`.
pub fn random_rhs(rng: &mut TestRng, m: usize, max_norm: f64) -> DVector<f64> {
    let dir = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
    let radius = 10f64.powf(rng.gen_range(-3.0..max_norm.log10()));
    dir.normalize() * radius
}

/// Uniform in the open unit ball.
pub fn random_ball(rng: &mut TestRng, m: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
        if v.norm() < 1.0 {
            return v;
        }
    }
}

/// Root of `w + p·w/(1 - w²) = r` on `(-1, 1)` by bisection.
pub fn scalar_oracle(p: f64, r: f64) -> f64 {
    let f = |w: f64| w + p * w / (1.0 - w * w) - r;
    let (mut lo, mut hi) = (-1.0 + 1e-300, 1.0 - 1e-16);
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return mid;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

pub fn phi(w: &DVector<f64>) -> DVector<f64> {
    w / (1.0 - w.norm_squared())
}
