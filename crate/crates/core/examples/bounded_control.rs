//! Strictly passive scalar plant under the shrinking funnel: state and input
//! settle into a bounded periodic regime.

use std::path::Path;

use funnel_sim::scenario::{bundled, prepare};
use funnel_sim::simulator::{energy_balance_report, integrate, IntegratorOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = bundled("scalar_bounded").expect("bundled scenario");
    let prepared = prepare(&cfg, Path::new("."))?;
    let tr = integrate(&prepared.problem, &IntegratorOptions { store_states: true, ..cfg.options() })?;
    for window in [(0.0, 50.0), (50.0, 100.0), (100.0, 150.0), (150.0, 200.0)] {
        let (mut x, mut u) = (0.0f64, 0.0f64);
        for k in (0..tr.len()).filter(|&k| tr.times[k] >= window.0 && tr.times[k] <= window.1) {
            x = x.max(tr.states[k].norm());
            u = u.max(tr.inputs[k].norm());
        }
        println!("t in [{:5.0}, {:5.0}]: sup |x| = {x:.5}, sup |u| = {u:.5}", window.0, window.1);
    }
    let eb = energy_balance_report(&prepared.problem, &tr)?;
    println!("dissipated: slack {:.4} (≥ 0 for a strictly passive plant)", eb.slack);
    Ok(())
}
