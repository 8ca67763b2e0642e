//! KYP and coercivity audit of the two beam variants and a scalar plant.

use funnel_sim::beam_fem::{assemble, Actuation, BeamConfig};
use funnel_sim::passive_lti::PassiveLti;
use funnel_sim::scenario::PASSIVITY_TOL;

fn main() -> funnel_sim::error::Result<()> {
    let plants = [
        ("beam, distributed", assemble(&BeamConfig::unit(80, Actuation::Distributed { from: 1.0 / 3.0, to: 2.0 / 3.0 }))?.to_passive_lti()?),
        ("beam, point", assemble(&BeamConfig::unit(80, Actuation::Point { at: 0.5 }))?.to_passive_lti()?),
        ("scalar, D = 1", PassiveLti::scalar(-1.0, 1.0, -1.0, 1.0)),
        ("scalar, A = +1", PassiveLti::scalar(1.0, 1.0, 1.0, 0.0)),
    ];
    for (label, sys) in &plants {
        let v = sys.check_passivity(PASSIVITY_TOL)?;
        println!("{label} (n = {})", sys.n());
        println!("  max KYP eigenvalue {:.3e} (scale {:.3e}) -> passive: {}", v.max_kyp_eig, v.scale, v.passive);
        if v.passive {
            for lambda in [0.1, 1.0, 10.0] {
                println!("  coercivity at λ = {lambda}: {:.6e}", sys.check_coercivity(lambda)?);
            }
        }
    }
    Ok(())
}
