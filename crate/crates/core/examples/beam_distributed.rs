//! Tracks y_ref = cos t with the distributed actuator on [1/3, 2/3].
//!
//! `cargo run --release --example beam_distributed [horizon]`

use std::path::Path;

use funnel_sim::scenario::{bundled, prepare};
use funnel_sim::simulator::{energy_balance_report, integrate, verify_funnel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = bundled("beam_distributed").expect("bundled scenario");
    if let Some(h) = std::env::args().nth(1) {
        cfg.horizon = h.parse()?;
    }
    let prepared = prepare(&cfg, Path::new("."))?;
    let clock = std::time::Instant::now();
    let tr = integrate(&prepared.problem, &cfg.options())?;
    println!("state dim {}, {} steps in {:.2} s", prepared.problem.system.n(), tr.stats.accepted, clock.elapsed().as_secs_f64());

    let f = verify_funnel(&tr);
    println!("max φ|e| = {:.6} at t = {:.3}", f.max_phi_e, f.argmax_t);
    for k in (0..tr.len()).step_by((tr.len() / 10).max(1)) {
        println!("t = {:6.2}  y = {:+.5}  e = {:+.5}  1/φ = {:.5}", tr.times[k], tr.outputs[k][0], tr.errors[k][0], tr.radii[k]);
    }
    let eb = energy_balance_report(&prepared.problem, &tr)?;
    println!("energy gain {:.6e}, supply {:.6e}, slack {:.3e} ± {:.3e}", eb.lhs, eb.rhs, eb.slack, eb.quad_err);
    Ok(())
}
