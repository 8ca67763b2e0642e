use funnel_sim::beam_fem::{
    assemble, assemble_unconstrained, element_mass, element_stiffness, Actuation, BeamConfig,
};
use nalgebra::DVector;

/// Shape functions on `[0, h]`, written out independently of the crate.
fn shapes(h: f64, x: f64) -> [f64; 4] {
    let s = x / h;
    [
        (1.0 - s).powi(2) * (1.0 + 2.0 * s),
        x * (1.0 - s).powi(2),
        s * s * (3.0 - 2.0 * s),
        x * s * (s - 1.0),
    ]
}

fn shapes_dd(h: f64, x: f64) -> [f64; 4] {
    let s = x / h;
    [
        (12.0 * s - 6.0) / (h * h),
        (6.0 * s - 4.0) / h,
        (6.0 - 12.0 * s) / (h * h),
        (6.0 * s - 2.0) / h,
    ]
}

fn simpson(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let n = 2000;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        acc += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

/// Root of `cos β cosh β + 1` in `[1.5, 2.5]` by bisection.
fn beta_one() -> f64 {
    let f = |b: f64| b.cos() * b.cosh() + 1.0;
    let (mut lo, mut hi) = (1.5, 2.5);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(lo) * f(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn unit(n: usize, act: Actuation) -> BeamConfig {
    BeamConfig::unit(n, act)
}

fn distributed() -> Actuation {
    Actuation::Distributed { from: 1.0 / 3.0, to: 2.0 / 3.0 }
}

#[test]
fn element_matrices_match_quadrature() {
    for (h, ei, rho) in [(0.1, 1.0, 1.0), (0.37, 2.5, 0.8)] {
        let m = element_mass(h, rho);
        let k = element_stiffness(h, ei);
        for i in 0..4 {
            for j in 0..4 {
                let mq = simpson(0.0, h, |x| rho * shapes(h, x)[i] * shapes(h, x)[j]);
                let kq = simpson(0.0, h, |x| ei * shapes_dd(h, x)[i] * shapes_dd(h, x)[j]);
                assert!((m[i][j] - mq).abs() < 1e-12 * (1.0 + mq.abs()), "M[{i}][{j}]");
                assert!((k[i][j] - kq).abs() < 1e-9 * (1.0 + kq.abs()), "K[{i}][{j}]");
                assert_eq!(m[i][j], m[j][i]);
                assert_eq!(k[i][j], k[j][i]);
            }
        }
    }
}

#[test]
fn rigid_motions_cost_no_strain_energy() {
    let free = assemble_unconstrained(&unit(12, distributed())).unwrap();
    let n = free.load.len();
    let h = free.element_length;
    // translation w = 1 and rotation w = ξ
    let translation = DVector::from_fn(n, |i, _| if i % 2 == 0 { 1.0 } else { 0.0 });
    let rotation = DVector::from_fn(n, |i, _| if i % 2 == 0 { (i / 2) as f64 * h } else { 1.0 });
    for v in [&translation, &rotation] {
        assert!((&free.stiffness * v).amax() < 1e-8);
    }
    let total_mass = translation.dot(&(&free.mass * &translation));
    assert!((total_mass - 1.0).abs() < 1e-13);
    // load · translation = ∫ b
    assert!((free.load.dot(&translation) - 1.0 / 3.0).abs() < 1e-13);
}

#[test]
fn tip_displacement_energy_matches_curvature_integral() {
    let n = 10;
    let sos = assemble(&unit(n, Actuation::Point { at: 1.0 })).unwrap();
    let dofs = sos.n_dof();
    let tip = dofs - 2;
    let sys = sos.to_passive_lti().unwrap();
    let mut x = DVector::zeros(2 * dofs);
    x[tip] = 1.0;
    let energy = sys.energy(&x).unwrap();
    // Only the last element carries the field w = N_3 (unit right-end displacement).
    let h = 1.0 / n as f64;
    let oracle = simpson(0.0, h, |s| shapes_dd(h, s)[2].powi(2));
    assert!((energy - oracle).abs() < 1e-9 * oracle, "{energy} vs {oracle}");
}

#[test]
fn point_load_at_a_node_is_a_unit_vector() {
    let sos = assemble(&unit(8, Actuation::Point { at: 0.5 })).unwrap();
    let nonzero: Vec<usize> = (0..sos.n_dof()).filter(|&i| sos.load[i] != 0.0).collect();
    // node 4 displacement; node 0 is clamped, so node k sits at 2k - 2
    assert_eq!(nonzero, vec![6]);
    assert_eq!(sos.load[6], 1.0);
}

#[test]
fn state_dimension_at_eighty_elements() {
    for act in [distributed(), Actuation::Point { at: 0.5 }] {
        let sys = assemble(&unit(80, act)).unwrap().to_passive_lti().unwrap();
        assert_eq!((sys.n(), sys.m()), (320, 1));
    }
}

#[test]
fn lowest_frequency_converges_at_fourth_order() {
    let exact = beta_one().powi(2);
    assert!((beta_one() - 1.875_104_068_7).abs() < 1e-10);
    let errors: Vec<f64> = [10, 20, 40, 80]
        .iter()
        .map(|&n| {
            let w = assemble(&unit(n, distributed())).unwrap().natural_frequencies().unwrap();
            w[0] - exact
        })
        .collect();
    assert!(errors.iter().all(|&e| e > 0.0), "Rayleigh–Ritz bounds from above: {errors:?}");
    for pair in errors.windows(2) {
        let order = (pair[0] / pair[1]).log2();
        assert!(order >= 3.9, "order {order} from {errors:?}");
    }
}

#[test]
fn higher_frequencies_approach_the_clamped_free_roots() {
    // second root of cos β cosh β = -1
    let beta2: f64 = 4.694_091_132_974_175;
    let w = assemble(&unit(40, distributed())).unwrap().natural_frequencies().unwrap();
    assert!((w[1] - beta2 * beta2).abs() < 1e-6 * beta2 * beta2);
}
