//! Lowest clamped-free eigenfrequencies against the roots of cos β cosh β = -1.

use funnel_sim::beam_fem::{assemble, Actuation, BeamConfig};

fn root(lo: f64, hi: f64) -> f64 {
    let f = |b: f64| b.cos() * b.cosh() + 1.0;
    let (mut lo, mut hi) = (lo, hi);
    while hi - lo > 1e-14 {
        let mid = 0.5 * (lo + hi);
        if f(lo) * f(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn main() -> funnel_sim::error::Result<()> {
    let exact: Vec<f64> = [(1.5, 2.5), (4.0, 5.0), (7.5, 8.5)].iter().map(|&(a, b)| root(a, b).powi(2)).collect();
    println!("exact ω: {exact:.8?}");
    let mut prev: Option<Vec<f64>> = None;
    for n in [5, 10, 20, 40, 80] {
        let w = assemble(&BeamConfig::unit(n, Actuation::Point { at: 1.0 }))?.natural_frequencies()?;
        let err: Vec<f64> = (0..3).map(|i| w[i] - exact[i]).collect();
        let orders = prev
            .as_ref()
            .map(|p| p.iter().zip(&err).map(|(a, b)| format!("{:.2}", (a / b).log2())).collect::<Vec<_>>().join(" "))
            .unwrap_or_default();
        println!("n = {n:3}: errors {:.3e} {:.3e} {:.3e}  orders {orders}", err[0], err[1], err[2]);
        prev = Some(err);
    }
    Ok(())
}
