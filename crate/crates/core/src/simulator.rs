//! Funnel-controlled closed loop and its integration.
//!
//! Two integrators share one PI step controller. The Dormand–Prince 5(4)
//! pair handles general plants. Plants in modal form use exponential
//! collocation, which propagates the rotations exactly and is not bound by
//! the highest frequency. A step is rejected when its error estimate is
//! too large, or when a stage or the endpoint leaves the funnel; in the
//! latter case the step is halved. Hence every accepted sample satisfies
//! `φ(t)‖e(t)‖ < 1`.
//!
//! Along accepted steps the supplied power `2 u·y` is integrated by the
//! trapezoid rule, with an error bar for the energy audit.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::collocation::{quantize_step, CollocationStepper, ControlLaw, ModalStructure, NodeSignals};
use crate::funnel::{self, is_zero, FunnelSpec};
use crate::monotone::CoerciveOperator;
use crate::passive_lti::PassiveLti;
use crate::signal::{eval_vector, Signal};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone)]
pub struct ClosedLoopProblem {
    pub system: PassiveLti,
    pub funnel: FunnelSpec,
    /// One signal per output channel.
    pub y_ref: Vec<Signal>,
    /// One signal per input channel, including any compensator term.
    pub u_ext: Vec<Signal>,
    pub x0: DVector<f64>,
    pub horizon: f64,
}

impl ClosedLoopProblem {
    /// Checks shapes, signal regularity and that the initial output lies
    /// inside the funnel.
    pub fn new(
        system: PassiveLti,
        funnel: FunnelSpec,
        y_ref: Vec<Signal>,
        u_ext: Vec<Signal>,
        x0: DVector<f64>,
        horizon: f64,
    ) -> Result<Self> {
        let problem = Self {
            system,
            funnel,
            y_ref,
            u_ext,
            x0,
            horizon,
        };
        problem.validate()?;
        Ok(problem)
    }

    fn validate(&self) -> Result<()> {
        let (n, m) = (self.system.n(), self.system.m());
        if self.x0.len() != n || self.y_ref.len() != m || self.u_ext.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "x0 {}, y_ref {}, u_ext {} for a system with n = {n}, m = {m}",
                self.x0.len(),
                self.y_ref.len(),
                self.u_ext.len()
            )));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::DimensionMismatch(format!("horizon must be positive, got {}", self.horizon)));
        }
        self.funnel.validate()?;
        if let Some(s) = self.y_ref.iter().chain(&self.u_ext).find(|s| !s.is_bounded()) {
            return Err(Error::InvalidSignal(format!("signal is not bounded on [0, ∞): {s:?}")));
        }
        self.initial_error().map(|_| ())
    }

    pub fn initial_error(&self) -> Result<DVector<f64>> {
        funnel::initial_error(
            &self.system,
            &self.x0,
            &eval_vector(&self.u_ext, 0.0),
            self.funnel.phi(0.0),
            &eval_vector(&self.y_ref, 0.0),
            1e-13,
        )
    }

    /// Adds the bump compensator that makes the controller output `u0` at
    /// `t = 0`. The initial error is the one produced by `u(0) = u0`,
    /// `e0 = C x0 + D u0 - y_ref(0)`.
    pub fn with_compensator(mut self, u0: &DVector<f64>) -> Result<Self> {
        let e0 = self.system.c() * &self.x0 + self.system.d() * u0 - eval_vector(&self.y_ref, 0.0);
        let comp = funnel::feedforward_compensator(
            &e0,
            self.funnel.phi(0.0),
            &eval_vector(&self.u_ext, 0.0),
            u0,
            &Signal::Bump,
        )?;
        self.u_ext = self
            .u_ext
            .into_iter()
            .zip(comp)
            .map(|(base, c)| match base {
                Signal::Constant { value } if value == 0.0 => c,
                other => other.plus(c),
            })
            .collect();
        self.validate()?;
        Ok(self)
    }
}

/// Closed-loop right-hand side together with the control signals at `(t, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RhsEval {
    pub xdot: DVector<f64>,
    pub y: DVector<f64>,
    pub y_ref: DVector<f64>,
    pub e: DVector<f64>,
    pub u: DVector<f64>,
    pub u_fun: DVector<f64>,
    pub u_ext: DVector<f64>,
    pub phi: f64,
}

pub fn closed_loop_rhs(problem: &ClosedLoopProblem, t: f64, x: &DVector<f64>) -> Result<RhsEval> {
    let lp = LoopEvaluator::new(problem, 1e-10)?;
    let mut xdot = vec![0.0; lp.n];
    let mut sample = ControlSample::new(lp.m);
    lp.eval(t, x.as_slice(), &mut xdot, &mut sample)?;
    let v = |s: &[f64]| DVector::from_column_slice(s);
    Ok(RhsEval {
        xdot: v(&xdot),
        y: v(&sample.y),
        y_ref: v(&sample.y_ref),
        e: v(&sample.e),
        u: v(&sample.u),
        u_fun: v(&sample.u_fun),
        u_ext: v(&sample.u_ext),
        phi: sample.phi,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    /// Modal collocation when the plant allows it, Dormand–Prince otherwise.
    #[default]
    Auto,
    /// Dormand–Prince 5(4), FSAL, PI step control.
    DormandPrince45,
    /// Exponential collocation at the three Radau nodes for plants in
    /// modal form (`A = [[0, Ω], [-Ω, 0]]`, `D = 0`). The rotations are
    /// propagated exactly; only the input is interpolated.
    ModalCollocation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; estimated from the problem when `None`.
    pub h0: Option<f64>,
    /// Smallest admissible step; `1e-12·T` when `None`.
    pub h_min: Option<f64>,
    pub method: Method,
    /// Record a sample only when at least this much time has passed since
    /// the previous one. `None` records every accepted step.
    pub sample_interval: Option<f64>,
    /// Keep the full state at every sample.
    pub store_states: bool,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-7,
            atol: 1e-9,
            h0: None,
            h_min: None,
            method: Method::Auto,
            sample_interval: None,
            store_states: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IntegratorStats {
    /// The method actually used.
    pub method: Method,
    pub accepted: usize,
    pub rejected: usize,
    /// Rejections caused by a stage leaving the funnel.
    pub funnel_rejections: usize,
    pub rhs_evals: usize,
    pub min_step: f64,
    pub max_step: f64,
    /// `Σ ‖x₅ - x₄‖` over accepted steps.
    pub local_error_sum: f64,
    /// Largest `φ(t)‖e(t)‖` over all accepted step endpoints.
    pub max_phi_e: f64,
    pub argmax_t: f64,
}

/// `2∫u·y dt` accumulated on accepted steps.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SupplyIntegral {
    pub value: f64,
    /// Trapezoid error, `Σ h³/12·|g''|` with `g''` from stage data.
    pub trapezoid_err: f64,
    /// `Σ |E(x₅) - E(x₄)|`: the energy effect of the local error estimate.
    pub integration_err: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Empty unless states were requested.
    pub states: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    pub references: Vec<DVector<f64>>,
    pub errors: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub u_fun: Vec<DVector<f64>>,
    pub u_ext: Vec<DVector<f64>>,
    /// Funnel radius `1/φ(t)`.
    pub radii: Vec<f64>,
    pub energies: Vec<f64>,
    pub initial_state: DVector<f64>,
    pub final_state: DVector<f64>,
    pub supply: SupplyIntegral,
    pub stats: IntegratorStats,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `φ(t)‖e(t)‖` per sample.
    pub fn funnel_ratios(&self) -> impl Iterator<Item = f64> + '_ {
        self.errors.iter().zip(&self.radii).map(|(e, r)| e.norm() / r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBalance {
    /// `E(x(T)) - E(x(0))`
    pub lhs: f64,
    /// `2∫₀ᵀ u·y dt`
    pub rhs: f64,
    /// `rhs - lhs`; passivity requires `slack ≥ -quad_err`.
    pub slack: f64,
    /// Total error bar, trapezoid plus integration contribution.
    pub quad_err: f64,
    pub trapezoid_err: f64,
    pub integration_err: f64,
}

impl EnergyBalance {
    pub fn passive(&self) -> bool {
        self.slack >= -self.quad_err
    }

    pub fn lossless(&self) -> bool {
        self.slack.abs() <= self.quad_err
    }
}

pub fn energy_balance_report(problem: &ClosedLoopProblem, traj: &Trajectory) -> Result<EnergyBalance> {
    let lhs = problem.system.energy(&traj.final_state)? - problem.system.energy(&traj.initial_state)?;
    let rhs = traj.supply.value;
    Ok(EnergyBalance {
        lhs,
        rhs,
        slack: rhs - lhs,
        quad_err: traj.supply.trapezoid_err + traj.supply.integration_err,
        trapezoid_err: traj.supply.trapezoid_err,
        integration_err: traj.supply.integration_err,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FunnelAudit {
    pub max_phi_e: f64,
    pub argmax_t: f64,
    pub violated: bool,
}

/// Largest `φ(t)‖e(t)‖` over the samples (and over every accepted step when
/// the integrator recorded it).
pub fn verify_funnel(traj: &Trajectory) -> FunnelAudit {
    let mut best = (f64::NEG_INFINITY, f64::NAN);
    for (ratio, &t) in traj.funnel_ratios().zip(&traj.times) {
        if ratio > best.0 || ratio.is_nan() {
            best = (ratio, t);
        }
    }
    if traj.stats.accepted > 0 && traj.stats.max_phi_e > best.0 {
        best = (traj.stats.max_phi_e, traj.stats.argmax_t);
    }
    FunnelAudit {
        max_phi_e: best.0,
        argmax_t: best.1,
        violated: !(best.0 < 1.0),
    }
}

/// Control quantities at one evaluation point.
#[derive(Debug, Clone)]
struct ControlSample {
    y: Vec<f64>,
    y_ref: Vec<f64>,
    e: Vec<f64>,
    u: Vec<f64>,
    u_fun: Vec<f64>,
    u_ext: Vec<f64>,
    phi: f64,
}

impl ControlSample {
    fn new(m: usize) -> Self {
        Self {
            y: vec![0.0; m],
            y_ref: vec![0.0; m],
            e: vec![0.0; m],
            u: vec![0.0; m],
            u_fun: vec![0.0; m],
            u_ext: vec![0.0; m],
            phi: 0.0,
        }
    }

    fn supply(&self) -> f64 {
        2.0 * self.u.iter().zip(&self.y).map(|(u, y)| u * y).sum::<f64>()
    }

    fn scaled_error(&self) -> Vec<f64> {
        self.e.iter().map(|v| self.phi * v).collect()
    }

    fn phi_e(&self) -> f64 {
        self.phi * self.e.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Preprocessed closed loop: sparse system matrices and the feedthrough solver.
struct LoopEvaluator<'a> {
    problem: &'a ClosedLoopProblem,
    n: usize,
    m: usize,
    a: CsrMatrix,
    /// Nonzeros of B per column.
    b_cols: Vec<Vec<(usize, f64)>>,
    c: CsrMatrix,
    h: CsrMatrix,
    feedthrough: Option<CoerciveOperator>,
    loop_tol: f64,
}

impl<'a> LoopEvaluator<'a> {
    fn new(problem: &'a ClosedLoopProblem, loop_tol: f64) -> Result<Self> {
        let sys = &problem.system;
        let feedthrough = if is_zero(sys.d()) {
            None
        } else {
            Some(CoerciveOperator::new(sys.d().clone())?)
        };
        Ok(Self {
            problem,
            n: sys.n(),
            m: sys.m(),
            a: CsrMatrix::from_dense(sys.a()),
            b_cols: sys
                .b()
                .column_iter()
                .map(|col| col.iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect())
                .collect(),
            c: CsrMatrix::from_dense(sys.c()),
            h: CsrMatrix::from_dense(sys.h()),
            feedthrough,
            loop_tol,
        })
    }

    fn eval(&self, t: f64, x: &[f64], xdot: &mut [f64], s: &mut ControlSample) -> Result<()> {
        self.c.mul_into(x, &mut s.y);
        self.control(t, s)?;
        self.a.mul_into(x, xdot);
        self.add_input(&s.u, xdot);
        Ok(())
    }

    /// Completes the sample from `s.y = Cx`: error, control and the full
    /// output including feedthrough.
    fn control(&self, t: f64, s: &mut ControlSample) -> Result<()> {
        let p = self.problem;
        let phi = p.funnel.phi(t);
        s.phi = phi;
        for i in 0..self.m {
            s.y_ref[i] = p.y_ref[i].value(t);
            s.u_ext[i] = p.u_ext[i].value(t);
        }
        match &self.feedthrough {
            None => {
                let mut nrm2 = 0.0;
                for i in 0..self.m {
                    s.e[i] = s.y[i] - s.y_ref[i];
                    nrm2 += s.e[i] * s.e[i];
                }
                let scaled = phi * nrm2.sqrt();
                if !(scaled < 1.0) {
                    return Err(Error::FunnelViolation(scaled));
                }
                let gain = 1.0 / (1.0 - scaled * scaled);
                for i in 0..self.m {
                    s.u_fun[i] = -gain * s.e[i];
                    s.u[i] = s.u_ext[i] + s.u_fun[i];
                }
            }
            Some(op) => {
                // w = φe solves w = r - Dφ(w), r = φ(Cx + D u_ext - y_ref)
                let d = self.problem.system.d();
                let u_ext = DVector::from_column_slice(&s.u_ext);
                let du = d * &u_ext;
                let r = DVector::from_fn(self.m, |i, _| phi * (s.y[i] + du[i] - s.y_ref[i]));
                let sol = op.solve_implicit(&r, self.loop_tol)?;
                let w2 = sol.w.norm_squared();
                for i in 0..self.m {
                    s.e[i] = sol.w[i] / phi;
                    s.u_fun[i] = -s.e[i] / (1.0 - w2);
                    s.u[i] = s.u_ext[i] + s.u_fun[i];
                }
                let u = DVector::from_column_slice(&s.u);
                let du = d * u;
                for i in 0..self.m {
                    s.y[i] += du[i];
                }
            }
        }
        Ok(())
    }

    /// `out += B u`
    fn add_input(&self, u: &[f64], out: &mut [f64]) {
        for (col, &uj) in self.b_cols.iter().zip(u) {
            for &(i, v) in col {
                out[i] += v * uj;
            }
        }
    }

    fn energy(&self, x: &[f64], buf: &mut [f64]) -> f64 {
        self.h.mul_into(x, buf);
        x.iter().zip(buf.iter()).map(|(a, b)| a * b).sum()
    }
}

// Dormand–Prince 5(4) coefficients.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const BETA: f64 = 0.04;

fn lincomb(out: &mut [f64], x: &[f64], h: f64, terms: &[(f64, &[f64])]) {
    let n = out.len();
    let x = &x[..n];
    match *terms {
        [(c1, k1)] => {
            let k1 = &k1[..n];
            for i in 0..n {
                out[i] = x[i] + h * (c1 * k1[i]);
            }
        }
        [(c1, k1), (c2, k2)] => {
            let (k1, k2) = (&k1[..n], &k2[..n]);
            for i in 0..n {
                out[i] = x[i] + h * (c1 * k1[i] + c2 * k2[i]);
            }
        }
        [(c1, k1), (c2, k2), (c3, k3)] => {
            let (k1, k2, k3) = (&k1[..n], &k2[..n], &k3[..n]);
            for i in 0..n {
                out[i] = x[i] + h * (c1 * k1[i] + c2 * k2[i] + c3 * k3[i]);
            }
        }
        [(c1, k1), (c2, k2), (c3, k3), (c4, k4)] => {
            let (k1, k2, k3, k4) = (&k1[..n], &k2[..n], &k3[..n], &k4[..n]);
            for i in 0..n {
                out[i] = x[i] + h * (c1 * k1[i] + c2 * k2[i] + c3 * k3[i] + c4 * k4[i]);
            }
        }
        [(c1, k1), (c2, k2), (c3, k3), (c4, k4), (c5, k5)] => {
            let (k1, k2, k3, k4, k5) = (&k1[..n], &k2[..n], &k3[..n], &k4[..n], &k5[..n]);
            for i in 0..n {
                out[i] = x[i] + h * (c1 * k1[i] + c2 * k2[i] + c3 * k3[i] + c4 * k4[i] + c5 * k5[i]);
            }
        }
        _ => unreachable!("Dormand–Prince stages combine at most five slopes"),
    }
}

struct Recorder {
    interval: Option<f64>,
    store_states: bool,
    last: f64,
}

impl Recorder {
    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        traj: &mut Trajectory,
        lp: &LoopEvaluator,
        t: f64,
        x: &[f64],
        s: &ControlSample,
        buf: &mut [f64],
        force: bool,
    ) {
        if !force && !traj.times.is_empty() {
            if let Some(dt) = self.interval {
                if t - self.last < dt {
                    return;
                }
            }
        }
        self.last = t;
        let v = |s: &[f64]| DVector::from_column_slice(s);
        traj.times.push(t);
        if self.store_states {
            traj.states.push(v(x));
        }
        traj.outputs.push(v(&s.y));
        traj.references.push(v(&s.y_ref));
        traj.errors.push(v(&s.e));
        traj.inputs.push(v(&s.u));
        traj.u_fun.push(v(&s.u_fun));
        traj.u_ext.push(v(&s.u_ext));
        traj.radii.push(1.0 / s.phi);
        traj.energies.push(lp.energy(x, buf));
    }
}

fn error_norm(err: &[f64], x0: &[f64], x1: &[f64], opts: &IntegratorOptions) -> f64 {
    let n = err.len();
    let sum: f64 = (0..n)
        .map(|i| {
            let sc = opts.atol + opts.rtol * x0[i].abs().max(x1[i].abs());
            let r = err[i] / sc;
            r * r
        })
        .sum();
    (sum / n as f64).sqrt()
}

/// What a step attempt leaves behind.
struct StepBuffers {
    /// Solution at the step end.
    xnew: Vec<f64>,
    /// Local error estimate.
    err: Vec<f64>,
    /// Control at the step end.
    end: ControlSample,
    /// `(c, 2u·y)` at two interior nodes of the step.
    supply_nodes: [(f64, f64); 2],
}

/// Dormand–Prince 5(4) with first-same-as-last.
struct Dopri {
    k: Vec<Vec<f64>>,
    xs: Vec<f64>,
    stage: ControlSample,
}

impl Dopri {
    fn new(n: usize, m: usize) -> Self {
        Self {
            k: vec![vec![0.0; n]; 7],
            xs: vec![0.0; n],
            stage: ControlSample::new(m),
        }
    }

    fn attempt(
        &mut self,
        lp: &LoopEvaluator,
        t: f64,
        h: f64,
        x: &[f64],
        out: &mut StepBuffers,
        stats: &mut IntegratorStats,
    ) -> Result<()> {
        let nodes = [C2, C3, C4, C5, 1.0, 1.0];
        for stage in 1..7 {
            let (done, rest) = self.k.split_at_mut(stage);
            let k = done;
            {
                let xs = if stage == 6 { &mut out.xnew } else { &mut self.xs };
                match stage {
                    1 => lincomb(xs, x, h, &[(A21, &k[0])]),
                    2 => lincomb(xs, x, h, &[(A31, &k[0]), (A32, &k[1])]),
                    3 => lincomb(xs, x, h, &[(A41, &k[0]), (A42, &k[1]), (A43, &k[2])]),
                    4 => lincomb(xs, x, h, &[(A51, &k[0]), (A52, &k[1]), (A53, &k[2]), (A54, &k[3])]),
                    5 => lincomb(xs, x, h, &[(A61, &k[0]), (A62, &k[1]), (A63, &k[2]), (A64, &k[3]), (A65, &k[4])]),
                    _ => lincomb(xs, x, h, &[(A71, &k[0]), (A73, &k[2]), (A74, &k[3]), (A75, &k[4]), (A76, &k[5])]),
                }
            }
            stats.rhs_evals += 1;
            let t_stage = t + nodes[stage - 1] * h;
            if stage == 6 {
                lp.eval(t_stage, &out.xnew, &mut rest[0], &mut out.end)?;
            } else {
                lp.eval(t_stage, &self.xs, &mut rest[0], &mut self.stage)?;
            }
            match stage {
                2 => out.supply_nodes[0] = (C3, self.stage.supply()),
                3 => out.supply_nodes[1] = (C4, self.stage.supply()),
                _ => {}
            }
        }
        let k = &self.k;
        for i in 0..out.err.len() {
            out.err[i] = h * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
        }
        Ok(())
    }

    fn accept(&mut self) {
        self.k.swap(0, 6);
    }
}

impl ControlLaw for LoopEvaluator<'_> {
    fn signals(&self, t: f64) -> NodeSignals {
        let p = self.problem;
        NodeSignals {
            phi: p.funnel.phi(t),
            y_ref: p.y_ref.iter().map(|s| s.value(t)).collect(),
            u_ext: p.u_ext.iter().map(|s| s.value(t)).collect(),
        }
    }
}

enum Scheme {
    Dopri(Dopri),
    Collocation(CollocationStepper),
}

/// Integrates the closed loop on `[0, T]`.
pub fn integrate(problem: &ClosedLoopProblem, opts: &IntegratorOptions) -> Result<Trajectory> {
    if !(opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(Error::DimensionMismatch("tolerances must be positive".into()));
    }
    let lp = LoopEvaluator::new(problem, opts.rtol.min(1e-10))?;
    let n = lp.n;
    let m = lp.m;
    let modal = match opts.method {
        Method::DormandPrince45 => None,
        Method::Auto => ModalStructure::detect(&problem.system),
        Method::ModalCollocation => Some(ModalStructure::detect(&problem.system).ok_or_else(|| {
            Error::DimensionMismatch("modal collocation needs A = [[0, Ω], [-Ω, 0]] and D = 0".into())
        })?),
    };
    let (mut scheme, method, order) = match modal {
        Some(modal) => (
            Scheme::Collocation(CollocationStepper::new(modal, opts.rtol)),
            Method::ModalCollocation,
            4.0,
        ),
        None => (Scheme::Dopri(Dopri::new(n, m)), Method::DormandPrince45, 5.0),
    };
    let t_end = problem.horizon;
    let h_min = opts.h_min.unwrap_or(1e-12 * t_end);

    let mut stats = IntegratorStats {
        min_step: f64::INFINITY,
        method,
        ..Default::default()
    };
    let mut traj = Trajectory {
        initial_state: problem.x0.clone(),
        ..Default::default()
    };
    let mut recorder = Recorder {
        interval: opts.sample_interval,
        store_states: opts.store_states,
        last: 0.0,
    };
    let mut ebuf = vec![0.0; n];
    let mut work = vec![0.0; n];
    let mut x: Vec<f64> = problem.x0.iter().copied().collect();
    let mut start = ControlSample::new(m);
    let mut out = StepBuffers {
        xnew: vec![0.0; n],
        err: vec![0.0; n],
        end: ControlSample::new(m),
        supply_nodes: [(0.5, 0.0); 2],
    };

    let mut t = 0.0;
    let mut f0 = vec![0.0; n];
    stats.rhs_evals += 1;
    lp.eval(t, &x, &mut f0, &mut start)?;
    if let Scheme::Dopri(d) = &mut scheme {
        d.k[0].copy_from_slice(&f0);
    }
    recorder.record(&mut traj, &lp, t, &x, &start, &mut ebuf, true);
    stats.max_phi_e = start.phi_e();
    stats.argmax_t = 0.0;

    let mut h = match (opts.h0, &scheme) {
        (Some(h0), _) => h0,
        (None, Scheme::Dopri(_)) => initial_step(&lp, &x, &f0, t, t_end, opts, &mut stats),
        (None, Scheme::Collocation(_)) => 1e-4 * t_end,
    }
    .min(t_end);
    let mut fac_old: f64 = 1e-4;
    let mut last_rejected = false;
    let expo = 1.0 / order;

    while t < t_end {
        if h < h_min {
            return Err(Error::StepUnderflow { t, h });
        }
        if matches!(scheme, Scheme::Collocation(_)) {
            h = quantize_step(h);
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }

        let attempt = match &mut scheme {
            Scheme::Dopri(d) => d.attempt(&lp, t, h, &x, &mut out, &mut stats),
            Scheme::Collocation(c) => c.attempt(&lp, t, h, &x, &start.u, &start.scaled_error()).and_then(|step| {
                stats.rhs_evals += step.newton_iterations + 1;
                out.xnew = step.xnew;
                out.err = step.err;
                out.supply_nodes = step.supply_nodes;
                stats.rhs_evals += 1;
                lp.c.mul_into(&out.xnew, &mut out.end.y);
                lp.control(t + h, &mut out.end)
            }),
        };
        match attempt {
            Ok(()) => {}
            Err(Error::FunnelViolation(_)) => {
                stats.rejected += 1;
                stats.funnel_rejections += 1;
                h *= 0.5;
                last_rejected = true;
                continue;
            }
            Err(Error::MaxIterations { .. }) if matches!(scheme, Scheme::Collocation(_)) => {
                stats.rejected += 1;
                h *= 0.5;
                last_rejected = true;
                continue;
            }
            Err(e) => return Err(e),
        }

        let err_norm = error_norm(&out.err, &x, &out.xnew, opts);
        if !err_norm.is_finite() {
            stats.rejected += 1;
            h *= 0.5;
            last_rejected = true;
            continue;
        }
        let fac11 = err_norm.powf(expo - BETA * 0.75);
        if err_norm <= 1.0 {
            let t_new = if last { t_end } else { t + h };
            trapezoid(&mut traj.supply, h, start.supply(), out.end.supply(), &out.supply_nodes);
            // E(x5) - E(x4) = errᵀH(2x5 - err)
            for i in 0..n {
                work[i] = 2.0 * out.xnew[i] - out.err[i];
            }
            lp.h.mul_into(&out.err, &mut ebuf);
            traj.supply.integration_err += ebuf.iter().zip(&work).map(|(a, b)| a * b).sum::<f64>().abs();
            stats.local_error_sum += out.err.iter().map(|v| v * v).sum::<f64>().sqrt();

            stats.accepted += 1;
            stats.min_step = stats.min_step.min(h);
            stats.max_step = stats.max_step.max(h);
            std::mem::swap(&mut x, &mut out.xnew);
            std::mem::swap(&mut start, &mut out.end);
            if let Scheme::Dopri(d) = &mut scheme {
                d.accept();
            }
            t = t_new;
            let ratio = start.phi_e();
            if ratio > stats.max_phi_e {
                stats.max_phi_e = ratio;
                stats.argmax_t = t;
            }
            recorder.record(&mut traj, &lp, t, &x, &start, &mut ebuf, last);

            let fac = (fac11 / fac_old.powf(BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            let mut h_new = h / fac;
            if last_rejected {
                h_new = h_new.min(h);
            }
            fac_old = err_norm.max(1e-4);
            last_rejected = false;
            h = h_new;
        } else {
            stats.rejected += 1;
            h /= (fac11 / SAFETY).min(1.0 / FAC_MIN);
            last_rejected = true;
        }
    }

    if stats.accepted == 0 {
        stats.min_step = 0.0;
    }
    traj.final_state = DVector::from_vec(x);
    traj.stats = stats;
    Ok(traj)
}

/// Trapezoid rule on one step. The error estimate `h³/12·|g''|` takes
/// `g''` from the divided differences through the interior samples.
fn trapezoid(acc: &mut SupplyIntegral, h: f64, g0: f64, g1: f64, interior: &[(f64, f64); 2]) {
    acc.value += 0.5 * h * (g0 + g1);
    let divided = |(c, gc): (f64, f64)| ((g1 - gc) / (1.0 - c) - (gc - g0) / c).abs();
    let dd = divided(interior[0]).max(divided(interior[1]));
    // g'' ≈ 2·dd/h²
    acc.trapezoid_err += h * dd / 6.0;
}

/// Starting step after Hairer, Nørsett & Wanner. Falls back to the cruder
/// estimate when the probing Euler step leaves the funnel.
fn initial_step(
    lp: &LoopEvaluator,
    x: &[f64],
    f0: &[f64],
    t: f64,
    t_end: f64,
    opts: &IntegratorOptions,
    stats: &mut IntegratorStats,
) -> f64 {
    let n = x.len();
    let scaled_norm = |v: &[f64]| {
        let s: f64 = (0..n)
            .map(|i| {
                let sc = opts.atol + opts.rtol * x[i].abs();
                (v[i] / sc).powi(2)
            })
            .sum();
        (s / n as f64).sqrt()
    };
    let d0 = scaled_norm(x);
    let d1 = scaled_norm(f0);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(t_end - t);
    let x1: Vec<f64> = (0..n).map(|i| x[i] + h0 * f0[i]).collect();
    let mut f1 = vec![0.0; n];
    let mut s = ControlSample::new(lp.m);
    stats.rhs_evals += 1;
    if lp.eval(t + h0, &x1, &mut f1, &mut s).is_err() {
        return h0;
    }
    let diff: Vec<f64> = (0..n).map(|i| f1[i] - f0[i]).collect();
    let d2 = scaled_norm(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1)
}
