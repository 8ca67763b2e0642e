//! Exponential collocation for plants whose drift is a set of decoupled
//! rotations, `A = [[0, Ω], [-Ω, 0]]`, and which have no feedthrough.
//!
//! Per mode, `ζ = q + i·p` obeys `ζ̇ = iωζ + βu` and the output is
//! `y = Σ Re(conj(κ)·ζ)`. On a step the input is interpolated at the three
//! Radau nodes and every mode is propagated exactly, so the step size is
//! set by the smoothness of `u` rather than by the highest frequency. The
//! node values of `u` are the only unknowns; Newton's method finds them.
//! The interpolant that also passes through `u(t)` gives a second endpoint,
//! and the difference is the local error estimate.

use std::collections::HashMap;
use std::rc::Rc;

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::funnel::is_zero;
use crate::passive_lti::PassiveLti;

type C64 = Complex<f64>;

/// Radau IIA nodes with three stages.
pub(crate) const NODES: [f64; 3] = [0.155_051_025_721_682_2, 0.644_948_974_278_317_8, 1.0];

const MAX_NEWTON: usize = 12;

/// Rotation frequencies and the complex input/output couplings per mode.
#[derive(Debug, Clone)]
pub(crate) struct ModalStructure {
    omega: Vec<f64>,
    /// `beta[j][i]`: input `j` into mode `i`.
    beta: Vec<Vec<C64>>,
    /// `kappa[k][i]`: mode `i` in output `k`.
    kappa: Vec<Vec<C64>>,
}

impl ModalStructure {
    pub(crate) fn detect(sys: &PassiveLti) -> Option<Self> {
        let n = sys.n();
        if n % 2 != 0 || !is_zero(sys.d()) {
            return None;
        }
        let k = n / 2;
        let a = sys.a();
        let omega: Vec<f64> = (0..k).map(|i| a[(i, k + i)]).collect();
        for i in 0..n {
            for j in 0..n {
                let expected = if i < k && j == k + i {
                    omega[i]
                } else if i >= k && j + k == i {
                    -omega[j]
                } else {
                    0.0
                };
                if a[(i, j)] != expected {
                    return None;
                }
            }
        }
        let (b, c) = (sys.b(), sys.c());
        let beta = (0..sys.m())
            .map(|j| (0..k).map(|i| C64::new(b[(k + i, j)], b[(i, j)])).collect())
            .collect();
        let kappa = (0..sys.m())
            .map(|r| (0..k).map(|i| C64::new(c[(r, k + i)], c[(r, i)])).collect())
            .collect();
        Some(Self { omega, beta, kappa })
    }

    fn modes(&self) -> usize {
        self.omega.len()
    }

    fn m(&self) -> usize {
        self.beta.len()
    }
}

/// `φ_1 … φ_4` at `z = i·x`, with `φ_k(z) = Σ_j z^j / (j + k)!`.
/// `e` is `exp(i·x)`.
fn phi_functions(x: f64, e: C64) -> [C64; 4] {
    if x.abs() < 2.0 {
        phi_taylor(x)
    } else {
        phi_recurrence(x, e)
    }
}

/// Series for `φ_4`, then `φ_k = 1/k! + z·φ_{k+1}` downwards.
fn phi_taylor(x: f64) -> [C64; 4] {
    let z = C64::new(0.0, x);
    let mut term = C64::new(1.0 / 24.0, 0.0);
    let mut acc = term;
    for j in 1..60 {
        term = term * z / (j + 4) as f64;
        acc += term;
        if term.norm_sqr() < 1e-36 * acc.norm_sqr() {
            break;
        }
    }
    let phi3 = z * acc + 1.0 / 6.0;
    let phi2 = z * phi3 + 0.5;
    let phi1 = z * phi2 + 1.0;
    [phi1, phi2, phi3, acc]
}

/// `φ_{k+1}(z) = (φ_k(z) - 1/k!) / z`, starting from `φ_0 = exp(z)`.
fn phi_recurrence(x: f64, e: C64) -> [C64; 4] {
    let mut out = [C64::new(0.0, 0.0); 4];
    let mut prev = e;
    let inv_z = C64::new(0.0, -1.0 / x);
    for (slot, f) in out.iter_mut().zip([1.0, 1.0, 0.5, 1.0 / 6.0]) {
        let next = (prev - f) * inv_z;
        *slot = next;
        prev = next;
    }
    out
}

/// Monomial coefficients of the Lagrange basis on `nodes`: `coef[l][p]`.
fn lagrange_monomials(nodes: &[f64]) -> Vec<Vec<f64>> {
    let q = nodes.len();
    let v = DMatrix::from_fn(q, q, |a, p| nodes[a].powi(p as i32));
    let inv = v.try_inverse().expect("distinct interpolation nodes");
    (0..q).map(|l| (0..q).map(|p| inv[(p, l)]).collect()).collect()
}

/// Outcome of one collocation attempt.
pub(crate) struct CollocationStep {
    pub xnew: Vec<f64>,
    pub err: Vec<f64>,
    /// Node values of `u` and `y` at the two interior nodes, for quadrature.
    pub supply_nodes: [(f64, f64); 2],
    pub newton_iterations: usize,
}

pub(crate) struct CollocationStepper {
    modal: ModalStructure,
    /// Lagrange bases on the Radau nodes and on `{0} ∪` Radau nodes.
    basis3: Vec<Vec<f64>>,
    basis4: Vec<Vec<f64>>,
    zeta: Vec<C64>,
    cache: HashMap<u64, Rc<StepWeights>>,
    newton_tol: f64,
}

/// Everything in a step that depends on `h` alone.
struct StepWeights {
    /// Per mode: `exp(iωhc)` at the nodes.
    e: Vec<[C64; 3]>,
    /// Per mode: endpoint weights for both interpolants.
    w3_end: Vec<[C64; 3]>,
    w4_end: Vec<[C64; 4]>,
    /// Node outputs from node inputs: `G[(a, r), (l, j)]`.
    g: DMatrix<f64>,
}

const CACHE_CAPACITY: usize = 256;

/// Rounds `h` down to a power of `2^(1/16)` so that step weights repeat.
pub(crate) fn quantize_step(h: f64) -> f64 {
    // The nudge keeps grid values fixed under rounding of `log2`.
    ((h.log2() * 16.0 + 1e-9).floor() / 16.0).exp2()
}

/// Funnel, reference and feedforward at one node.
pub(crate) struct NodeSignals {
    pub phi: f64,
    pub y_ref: Vec<f64>,
    pub u_ext: Vec<f64>,
}

/// Source of the time-dependent data of the control law.
pub(crate) trait ControlLaw {
    fn signals(&self, t: f64) -> NodeSignals;
}

impl CollocationStepper {
    pub(crate) fn new(modal: ModalStructure, rtol: f64) -> Self {
        let k = modal.modes();
        let with_start = [0.0, NODES[0], NODES[1], NODES[2]];
        Self {
            basis3: lagrange_monomials(&NODES),
            basis4: lagrange_monomials(&with_start),
            zeta: vec![C64::new(0.0, 0.0); k],
            cache: HashMap::new(),
            newton_tol: (1e-3 * rtol).clamp(1e-13, 1e-10),
            modal,
        }
    }

    fn weights(&mut self, h: f64) -> Rc<StepWeights> {
        if let Some(w) = self.cache.get(&h.to_bits()) {
            return w.clone();
        }
        if self.cache.len() >= CACHE_CAPACITY {
            self.cache.clear();
        }
        let w = Rc::new(self.compute_weights(h));
        self.cache.insert(h.to_bits(), w.clone());
        w
    }

    fn compute_weights(&self, h: f64) -> StepWeights {
        let k = self.modal.modes();
        let m = self.modal.m();
        let q = NODES.len();
        let zero = C64::new(0.0, 0.0);
        let mut out = StepWeights {
            e: vec![[zero; 3]; k],
            w3_end: vec![[zero; 3]; k],
            w4_end: vec![[zero; 4]; k],
            g: DMatrix::zeros(q * m, q * m),
        };
        for i in 0..k {
            let w = self.modal.omega[i];
            for (a, &tau) in NODES.iter().enumerate() {
                let x_arg = w * h * tau;
                let (s, c) = x_arg.sin_cos();
                let e = C64::new(c, s);
                out.e[i][a] = e;
                let phis = phi_functions(x_arg, e);
                // ψ_p(τ) = p! τ^{p+1} φ_{p+1}(iωhτ)
                let mut psi = [zero; 4];
                let mut tp = tau;
                for (p, f) in [1.0, 1.0, 2.0, 6.0].into_iter().enumerate() {
                    psi[p] = phis[p] * (f * tp);
                    tp *= tau;
                }
                let mut w3 = [zero; 3];
                for (l, slot) in w3.iter_mut().enumerate() {
                    let acc: C64 = (0..3).map(|p| psi[p] * self.basis3[l][p]).sum();
                    *slot = acc * h;
                }
                for r in 0..m {
                    let kap = self.modal.kappa[r][i].conj();
                    for (l, wl) in w3.iter().enumerate() {
                        for j in 0..m {
                            out.g[(a * m + r, l * m + j)] += (kap * wl * self.modal.beta[j][i]).re;
                        }
                    }
                }
                if a == q - 1 {
                    out.w3_end[i] = w3;
                    for l in 0..4 {
                        let acc: C64 = (0..4).map(|p| psi[p] * self.basis4[l][p]).sum();
                        out.w4_end[i][l] = acc * h;
                    }
                }
            }
        }
        out
    }

    /// One step of size `h` from `(t, x)`, where the input is `u0` and
    /// `w0 = φ(t)·e(t)`.
    pub(crate) fn attempt(
        &mut self,
        law: &impl ControlLaw,
        t: f64,
        h: f64,
        x: &[f64],
        u0: &[f64],
        w0: &[f64],
    ) -> Result<CollocationStep> {
        let k = self.modal.modes();
        let m = self.modal.m();
        let q = NODES.len();
        for i in 0..k {
            self.zeta[i] = C64::new(x[k + i], x[i]);
        }

        let weights = self.weights(h);
        let g = &weights.g;
        let mut y_free = vec![0.0; q * m];
        for i in 0..k {
            for a in 0..q {
                let free = weights.e[i][a] * self.zeta[i];
                for r in 0..m {
                    y_free[a * m + r] += (self.modal.kappa[r][i].conj() * free).re;
                }
            }
        }

        // Unknowns are w = φ·e at the nodes, kept inside the unit ball;
        // u = u_ext - (w/φ)/(1 - ‖w‖²) follows from them.
        let signals: Vec<NodeSignals> = NODES.iter().map(|c| law.signals(t + c * h)).collect();
        let inputs = |w: &DVector<f64>| {
            let mut u = DVector::<f64>::zeros(q * m);
            for (a, sig) in signals.iter().enumerate() {
                let wa = w.rows(a * m, m);
                let gain = 1.0 / (sig.phi * (1.0 - wa.norm_squared()));
                for j in 0..m {
                    u[a * m + j] = sig.u_ext[j] - gain * wa[j];
                }
            }
            u
        };
        let mut w = DVector::<f64>::zeros(q * m);
        for a in 0..q {
            w.rows_mut(a * m, m).copy_from_slice(w0);
        }
        let mut iterations = 0;
        let (u, y) = loop {
            let u = inputs(&w);
            let y = DVector::from_column_slice(&y_free) + g * &u;
            let mut res = DVector::<f64>::zeros(q * m);
            for (a, sig) in signals.iter().enumerate() {
                for r in 0..m {
                    res[a * m + r] = w[a * m + r] - sig.phi * (y[a * m + r] - sig.y_ref[r]);
                }
            }
            // ∂u_l/∂w_l = -((1 - ‖w‖²)I + 2wwᵀ) / (φ (1 - ‖w‖²)²)
            let mut du = DMatrix::<f64>::zeros(q * m, q * m);
            for (l, sig) in signals.iter().enumerate() {
                let wl = w.rows(l * m, m);
                let d = 1.0 - wl.norm_squared();
                for i in 0..m {
                    for j in 0..m {
                        let delta = if i == j { d } else { 0.0 };
                        du[(l * m + i, l * m + j)] = -(delta + 2.0 * wl[i] * wl[j]) / (sig.phi * d * d);
                    }
                }
            }
            let mut jac = -(g * du);
            for (a, sig) in signals.iter().enumerate() {
                for r in 0..m {
                    jac.row_mut(a * m + r).scale_mut(sig.phi);
                }
            }
            for i in 0..q * m {
                jac[(i, i)] += 1.0;
            }
            let Some(step) = jac.lu().solve(&(-res)) else {
                return Err(Error::MaxIterations {
                    iterations,
                    residual: f64::NAN,
                });
            };
            iterations += 1;
            let mut damping = 1.0;
            let inside = |v: &DVector<f64>| (0..q).all(|a| v.rows(a * m, m).norm_squared() < 1.0);
            let mut trial = &w + &step;
            while !inside(&trial) {
                damping *= 0.5;
                if damping < 1e-8 {
                    return Err(Error::MaxIterations {
                        iterations,
                        residual: step.norm(),
                    });
                }
                trial = &w + &step * damping;
            }
            w = trial;
            let change = step.norm() * damping;
            if change <= self.newton_tol {
                let u = inputs(&w);
                let y = DVector::from_column_slice(&y_free) + g * &u;
                break (u, y);
            }
            if iterations >= MAX_NEWTON {
                return Err(Error::MaxIterations {
                    iterations,
                    residual: change,
                });
            }
        };

        let mut xnew = vec![0.0; 2 * k];
        let mut err = vec![0.0; 2 * k];
        for i in 0..k {
            let free = weights.e[i][q - 1] * self.zeta[i];
            let mut z3 = free;
            let mut z4 = free;
            for j in 0..m {
                let beta = self.modal.beta[j][i];
                z4 += weights.w4_end[i][0] * beta * u0[j];
                for l in 0..q {
                    z3 += weights.w3_end[i][l] * beta * u[l * m + j];
                    z4 += weights.w4_end[i][l + 1] * beta * u[l * m + j];
                }
            }
            xnew[i] = z4.im;
            xnew[k + i] = z4.re;
            err[i] = z4.im - z3.im;
            err[k + i] = z4.re - z3.re;
        }
        let supply = |a: usize| 2.0 * (0..m).map(|j| u[a * m + j] * y[a * m + j]).sum::<f64>();
        Ok(CollocationStep {
            xnew,
            err,
            supply_nodes: [(NODES[0], supply(0)), (NODES[1], supply(1))],
            newton_iterations: iterations,
        })
    }
}
