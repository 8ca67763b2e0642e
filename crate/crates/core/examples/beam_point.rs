//! Point actuation at the beam midpoint, starting with e(0) = -1. The bump
//! compensator keeps u(0) = 0 while the funnel gain starts from φ(0)|e(0)| = 0.5.
//!
//! `cargo run --release --example beam_point [horizon]`

use std::path::Path;

use funnel_sim::scenario::{bundled, prepare};
use funnel_sim::simulator::{integrate, verify_funnel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = bundled("beam_point").expect("bundled scenario");
    cfg.horizon = match std::env::args().nth(1) {
        Some(h) => h.parse()?,
        None => 5.0,
    };
    let prepared = prepare(&cfg, Path::new("."))?;
    let u_ext = &prepared.problem.u_ext[0];
    for t in [0.0, 0.25, 0.5, 0.75, 1.0, 1.5] {
        println!("u_ext({t:.2}) = {:+.6}", u_ext.value(t));
    }
    let tr = integrate(&prepared.problem, &cfg.options())?;
    println!("e(0) = {}, u(0) = {}", tr.errors[0][0], tr.inputs[0][0]);
    let f = verify_funnel(&tr);
    println!(
        "max φ|e| = {:.6} at t = {:.3}; {} steps, {} rejected by the funnel",
        f.max_phi_e, f.argmax_t, tr.stats.accepted, tr.stats.funnel_rejections
    );
    Ok(())
}
