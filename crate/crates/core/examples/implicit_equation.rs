//! Solves w + Pφ(w) = r for a few operators and shows the solution map's
//! sensitivity against both Lipschitz constants.

use funnel_sim::monotone::CoerciveOperator;
use nalgebra::{DMatrix, DVector};

fn main() -> funnel_sim::error::Result<()> {
    let operators = [
        ("p = 0.25", DMatrix::from_element(1, 1, 0.25)),
        ("p = 4", DMatrix::from_element(1, 1, 4.0)),
        ("rotation-dominated", DMatrix::from_row_slice(2, 2, &[0.5, 3.0, -3.0, 0.5])),
    ];
    for (label, p) in operators {
        let op = CoerciveOperator::new(p)?;
        let m = op.dim();
        println!("{label}: c₀ = {:.4}, ‖P⁻¹‖ = {:.4}", op.inverse_coercivity(), op.inverse_norm());
        for scale in [1e-3, 1.0, 1e3] {
            let r = DVector::from_element(m, scale);
            let sol = op.solve_implicit(&r, 1e-13)?;
            let dr = DVector::from_element(m, 1e-7);
            let w2 = op.solve_implicit(&(&r + &dr), 1e-14)?.w;
            let ratio = (&w2 - &sol.w).norm() / dr.norm();
            println!(
                "  |r| = {:.0e}: ‖w‖ = {:.8}, residual {:.1e}, {} Newton steps, dw/dr ≈ {ratio:.4}",
                r.norm(),
                sol.w.norm(),
                sol.residual,
                sol.newton_steps
            );
        }
        println!(
            "  bounds: ‖P⁻¹‖/(1 + c₀/2) = {:.4}, ‖P⁻¹‖/c₀ = {:.4}",
            op.lipschitz_bound(),
            op.unscaled_lipschitz_bound()
        );
    }
    Ok(())
}
