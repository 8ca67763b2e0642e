//! A = -1, B = 1, C = -1, D = 1 with φ ≡ 2 and y_ref ≡ 1: the output stays in
//! (0.5, 1.5) while state and input grow without bound.

use funnel_sim::funnel::FunnelSpec;
use funnel_sim::passive_lti::PassiveLti;
use funnel_sim::signal::Signal;
use funnel_sim::simulator::{integrate, ClosedLoopProblem, IntegratorOptions};
use nalgebra::DVector;

fn main() -> funnel_sim::error::Result<()> {
    let problem = ClosedLoopProblem::new(
        PassiveLti::scalar(-1.0, 1.0, -1.0, 1.0),
        FunnelSpec::constant(2.0)?,
        vec![Signal::constant(1.0)],
        vec![Signal::zero()],
        DVector::zeros(1),
        50.0,
    )?;
    let tr = integrate(&problem, &IntegratorOptions { sample_interval: Some(5.0), ..Default::default() })?;
    println!("{:>6} {:>10} {:>10} {:>10}", "t", "x", "y", "u");
    for k in 0..tr.len() {
        println!("{:6.2} {:10.4} {:10.4} {:10.4}", tr.times[k], tr.states[k][0], tr.outputs[k][0], tr.inputs[k][0]);
    }
    Ok(())
}
