use funnel_sim::beam_fem::{assemble, Actuation, BeamConfig};
use funnel_sim::funnel::FunnelSpec;
use funnel_sim::passive_lti::PassiveLti;
use funnel_sim::signal::Signal;
use funnel_sim::simulator::{
    energy_balance_report, integrate, verify_funnel, ClosedLoopProblem, IntegratorOptions, Method,
};
use nalgebra::DVector;
use proptest::prelude::*;

fn shrinking_funnel() -> FunnelSpec {
    FunnelSpec::exp_approach(10.0, 9.5, 0.5).unwrap()
}

fn beam_problem(n: usize, point: bool, horizon: f64, modal: bool) -> ClosedLoopProblem {
    let act = if point {
        Actuation::Point { at: 0.5 }
    } else {
        Actuation::Distributed { from: 1.0 / 3.0, to: 2.0 / 3.0 }
    };
    let sos = assemble(&BeamConfig::unit(n, act)).unwrap();
    let sys = if modal {
        sos.modal_form().unwrap().system
    } else {
        sos.to_passive_lti().unwrap()
    };
    let dim = sys.n();
    let p = ClosedLoopProblem::new(sys, shrinking_funnel(), vec![Signal::cos(1.0)], vec![Signal::zero()], DVector::zeros(dim), horizon)
        .unwrap();
    if point {
        p.with_compensator(&DVector::zeros(1)).unwrap()
    } else {
        p
    }
}

#[test]
fn unbounded_example_grows_linearly() {
    let sys = PassiveLti::scalar(-1.0, 1.0, -1.0, 1.0);
    let p = ClosedLoopProblem::new(
        sys,
        FunnelSpec::constant(2.0).unwrap(),
        vec![Signal::constant(1.0)],
        vec![Signal::zero()],
        DVector::zeros(1),
        50.0,
    )
    .unwrap();
    let tr = integrate(&p, &IntegratorOptions { sample_interval: Some(0.05), ..Default::default() }).unwrap();
    for k in 0..tr.len() {
        let (t, x, y, u) = (tr.times[k], tr.states[k][0], tr.outputs[k][0], tr.inputs[k][0]);
        assert!(y > 0.5 && y < 1.5, "t = {t}: y = {y}");
        assert!(x >= t / 2.0 - 0.1, "t = {t}: x = {x}");
        assert!(u >= t / 2.0 + 0.5 - 0.1, "t = {t}: u = {u}");
    }
    assert!(tr.final_state[0] >= 25.0 - 0.1);
}

#[test]
fn auto_picks_collocation_only_for_modal_plants() {
    let modal = integrate(&beam_problem(4, false, 0.5, true), &IntegratorOptions::default()).unwrap();
    let phys = integrate(&beam_problem(4, false, 0.5, false), &IntegratorOptions::default()).unwrap();
    assert_eq!(modal.stats.method, Method::ModalCollocation);
    assert_eq!(phys.stats.method, Method::DormandPrince45);
    let forced = IntegratorOptions { method: Method::ModalCollocation, ..Default::default() };
    assert!(integrate(&beam_problem(4, false, 0.5, false), &forced).is_err());
}

#[test]
fn physical_and_modal_runs_agree() {
    let n = 6;
    let sos = assemble(&BeamConfig::unit(n, Actuation::Point { at: 0.5 })).unwrap();
    let modal = sos.modal_form().unwrap();
    let opts = IntegratorOptions { rtol: 1e-9, atol: 1e-11, ..Default::default() };
    let a = integrate(&beam_problem(n, true, 2.0, false), &opts).unwrap();
    let b = integrate(&beam_problem(n, true, 2.0, true), &opts).unwrap();
    let mapped = &modal.transform * &b.final_state;
    let diff = (&mapped - &a.final_state).norm() / a.final_state.norm();
    assert!(diff < 1e-5, "relative difference {diff}");
}

#[test]
fn beam_energy_balance_is_lossless() {
    for point in [false, true] {
        let p = beam_problem(10, point, 3.0, true);
        let tr = integrate(&p, &IntegratorOptions::default()).unwrap();
        let eb = energy_balance_report(&p, &tr).unwrap();
        assert!(eb.lossless(), "point = {point}: {eb:?}");
        assert!(!verify_funnel(&tr).violated);
    }
}

#[test]
fn tolerance_refinement_converges() {
    for point in [false, true] {
        let p = beam_problem(10, point, 3.0, true);
        let run = |rtol: f64| integrate(&p, &IntegratorOptions { rtol, atol: rtol * 1e-2, ..Default::default() }).unwrap();
        let (coarse, fine) = (run(1e-7), run(5e-8));
        let change = (&coarse.final_state - &fine.final_state).norm();
        let budget = 10.0 * coarse.stats.local_error_sum;
        assert!(change < budget, "point = {point}: change {change} vs {budget}");
    }
}

#[test]
fn accepted_samples_never_leave_the_funnel_on_the_point_beam() {
    let p = beam_problem(20, true, 4.0, true);
    let tr = integrate(&p, &IntegratorOptions::default()).unwrap();
    assert!(tr.funnel_ratios().all(|r| r < 1.0));
    assert_eq!(tr.errors[0][0], -1.0);
    assert!((tr.u_ext[0][0] + 4.0 / 3.0).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn funnel_invariant_on_random_scalar_plants(
        a in -3.0f64..0.0,
        b in 0.2f64..3.0,
        d in 0.0f64..2.0,
        omega in 0.1f64..4.0,
        amp in 0.1f64..3.0,
        phi_inf in 0.5f64..20.0,
    ) {
        // C = B keeps the plant passive with H = 1.
        let sys = PassiveLti::scalar(a, b, b, d);
        let y_ref = Signal::Cos { omega, phase: 0.0, amplitude: amp };
        // φ(0)·|e(0)| = 0.9
        let phi0 = 0.9 / amp;
        let funnel = FunnelSpec::exp_approach(phi0 + phi_inf, phi_inf, 0.7).unwrap();
        let p = ClosedLoopProblem::new(sys, funnel, vec![y_ref], vec![Signal::zero()], DVector::zeros(1), 10.0).unwrap();
        let tr = integrate(&p, &IntegratorOptions::default()).unwrap();
        prop_assert!(!verify_funnel(&tr).violated);
        prop_assert!(energy_balance_report(&p, &tr).unwrap().passive());
    }
}
