//! Funnel functions, the funnel feedback law and its initialization.
//!
//! The controller is
//!
//! ```text
//!   u(t) = -e(t) / (1 - φ(t)²‖e(t)‖²) + u_ext(t),   e = y - y_ref,
//! ```
//!
//! and keeps `φ(t)‖e(t)‖ < 1`, i.e. the error inside the funnel of radius `1/φ(t)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::monotone::CoerciveOperator;
use crate::passive_lti::PassiveLti;
use crate::signal::{Jet, Signal};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FunnelFamily {
    /// `φ(t) = a - b·e^{-ct}`, increasing from `a - b` towards `a`.
    ExpApproach { a: f64, b: f64, c: f64 },
    /// `φ ≡ value`: a tube of radius `1/value`.
    Constant { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunnelSpec {
    #[serde(flatten)]
    pub family: FunnelFamily,
    /// Lower bound `μ` on `φ`. Defaults to `inf φ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
}

impl FunnelSpec {
    pub fn exp_approach(a: f64, b: f64, c: f64) -> Result<Self> {
        Self::new(FunnelFamily::ExpApproach { a, b, c }, None)
    }

    pub fn constant(value: f64) -> Result<Self> {
        Self::new(FunnelFamily::Constant { value }, None)
    }

    pub fn new(family: FunnelFamily, mu: Option<f64>) -> Result<Self> {
        let spec = Self { family, mu };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidFunnel(m));
        let inf = match self.family {
            FunnelFamily::ExpApproach { a, b, c } => {
                if !(a > b && b >= 0.0 && c > 0.0 && a.is_finite() && c.is_finite()) {
                    return bad(format!("exp_approach needs a > b ≥ 0 and c > 0 (a={a}, b={b}, c={c})"));
                }
                a - b
            }
            FunnelFamily::Constant { value } => {
                if !(value > 0.0 && value.is_finite()) {
                    return bad(format!("constant funnel needs a positive value, got {value}"));
                }
                value
            }
        };
        match self.mu {
            Some(mu) if !(mu > 0.0 && mu <= inf) => bad(format!("μ = {mu} must lie in (0, {inf}]")),
            _ => Ok(()),
        }
    }

    /// The lower bound `μ`.
    pub fn lower_bound(&self) -> f64 {
        self.mu.unwrap_or(match self.family {
            FunnelFamily::ExpApproach { a, b, .. } => a - b,
            FunnelFamily::Constant { value } => value,
        })
    }

    pub fn eval(&self, t: f64) -> Jet {
        match self.family {
            FunnelFamily::ExpApproach { a, b, c } => {
                let decay = b * (-c * t).exp();
                Jet {
                    value: a - decay,
                    d1: c * decay,
                    d2: -c * c * decay,
                }
            }
            FunnelFamily::Constant { value } => Jet {
                value,
                d1: 0.0,
                d2: 0.0,
            },
        }
    }

    pub fn phi(&self, t: f64) -> f64 {
        self.eval(t).value
    }

    /// Funnel radius `1/φ(t)`.
    pub fn radius(&self, t: f64) -> f64 {
        1.0 / self.phi(t)
    }

    /// `lim_{t→∞} 1/φ(t)`.
    pub fn limit_radius(&self) -> f64 {
        match self.family {
            FunnelFamily::ExpApproach { a, .. } => 1.0 / a,
            FunnelFamily::Constant { value } => 1.0 / value,
        }
    }
}

/// Feedback part `-e / (1 - φ²‖e‖²)` of the funnel law.
pub fn funnel_gain(phi_t: f64, e: &DVector<f64>) -> Result<DVector<f64>> {
    let scaled = phi_t * e.norm();
    if !(scaled < 1.0) {
        return Err(Error::FunnelViolation(scaled));
    }
    Ok(-e / (1.0 - scaled * scaled))
}

/// Compactly supported feedforward term
/// `p(t)·(e0/(1 - φ0²‖e0‖²) - u_ext0 + u0)`, one signal per input channel.
/// Added to `u_ext`, it makes the controller output equal `u0` at `t = 0`.
pub fn feedforward_compensator(
    e0: &DVector<f64>,
    phi0: f64,
    u_ext0: &DVector<f64>,
    u0: &DVector<f64>,
    bump: &Signal,
) -> Result<Vec<Signal>> {
    if e0.len() != u_ext0.len() || e0.len() != u0.len() {
        return Err(Error::DimensionMismatch(format!(
            "e0 {}, u_ext0 {}, u0 {}",
            e0.len(),
            u_ext0.len(),
            u0.len()
        )));
    }
    let scaled = phi0 * e0.norm();
    if !(scaled < 1.0) {
        return Err(Error::FunnelViolation(scaled));
    }
    let mismatch = e0 / (1.0 - scaled * scaled) - u_ext0 + u0;
    Ok(mismatch.iter().map(|&k| bump.clone().scaled(k)).collect())
}

/// Solves the output equation at `t = 0`,
/// `e0 = C x0 + D (u_ext0 - e0/(1 - φ0²‖e0‖²)) - y_ref0`, with `φ0‖e0‖ < 1`.
///
/// With `D = 0` this is explicit. Otherwise `w = φ0 e0` satisfies
/// `w = r - D φ(w)` with `r = φ0 (C x0 + D u_ext0 - y_ref0)`.
pub fn initial_error(
    sys: &PassiveLti,
    x0: &DVector<f64>,
    u_ext0: &DVector<f64>,
    phi0: f64,
    y_ref0: &DVector<f64>,
    tol: f64,
) -> Result<DVector<f64>> {
    if !(phi0 > 0.0) {
        return Err(Error::InvalidFunnel(format!("φ(0) must be positive, got {phi0}")));
    }
    if x0.len() != sys.n() || u_ext0.len() != sys.m() || y_ref0.len() != sys.m() {
        return Err(Error::DimensionMismatch(format!(
            "x0 {}, u_ext0 {}, y_ref0 {} for a system with n = {}, m = {}",
            x0.len(),
            u_ext0.len(),
            y_ref0.len(),
            sys.n(),
            sys.m()
        )));
    }
    let open_loop = sys.c() * x0 - y_ref0;
    if is_zero(sys.d()) {
        let scaled = phi0 * open_loop.norm();
        if !(scaled < 1.0) {
            return Err(Error::NoFeasibleInit(scaled));
        }
        return Ok(open_loop);
    }
    let op = CoerciveOperator::new(sys.d().clone())?;
    let r = (open_loop + sys.d() * u_ext0) * phi0;
    let sol = op.solve_implicit(&r, tol)?;
    Ok(sol.w / phi0)
}

pub(crate) fn is_zero(m: &DMatrix<f64>) -> bool {
    m.iter().all(|&v| v == 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn gain_examples() {
        assert_eq!(funnel_gain(0.5, &v(&[0.0])).unwrap(), v(&[0.0]));
        assert!(matches!(funnel_gain(2.0, &v(&[-1.0])), Err(Error::FunnelViolation(_))));
        let u = funnel_gain(0.5, &v(&[-1.0])).unwrap();
        assert!((u[0] - 4.0 / 3.0).abs() < 1e-15);
        // odd in e
        let e = v(&[0.3, -0.4]);
        assert_eq!(funnel_gain(1.5, &(-&e)).unwrap(), -funnel_gain(1.5, &e).unwrap());
    }

    #[test]
    fn shrinking_funnel_radii() {
        let f = FunnelSpec::exp_approach(10.0, 9.5, 0.5).unwrap();
        assert_eq!(f.radius(0.0), 2.0);
        assert!((f.limit_radius() - 0.1).abs() < 1e-16);
        assert!((f.radius(200.0) - 0.1).abs() < 1e-15);
        assert_eq!(f.lower_bound(), 0.5);
    }

    #[test]
    fn funnel_validation() {
        assert!(FunnelSpec::exp_approach(1.0, 2.0, 0.5).is_err());
        assert!(FunnelSpec::exp_approach(1.0, 0.5, 0.0).is_err());
        assert!(FunnelSpec::constant(0.0).is_err());
        assert!(FunnelSpec::new(FunnelFamily::Constant { value: 2.0 }, Some(3.0)).is_err());
        let f: FunnelSpec = serde_json::from_str(r#"{"type":"exp_approach","a":10,"b":9.5,"c":0.5}"#).unwrap();
        assert_eq!(f, FunnelSpec::exp_approach(10.0, 9.5, 0.5).unwrap());
    }

    #[test]
    fn funnel_derivatives() {
        let f = FunnelSpec::exp_approach(10.0, 9.5, 0.5).unwrap();
        let h = 1e-5;
        for t in [0.1, 1.0, 7.5] {
            let fd = (f.phi(t + h) - f.phi(t - h)) / (2.0 * h);
            assert!((fd - f.eval(t).d1).abs() < 1e-8);
            let fd2 = (f.eval(t + h).d1 - f.eval(t - h).d1) / (2.0 * h);
            assert!((fd2 - f.eval(t).d2).abs() < 1e-8);
        }
    }

    #[test]
    fn compensator_for_point_scenario() {
        let comp = feedforward_compensator(&v(&[-1.0]), 0.5, &v(&[0.0]), &v(&[0.0]), &Signal::Bump).unwrap();
        for t in [0.0, 0.25, 0.5, 0.9, 1.0] {
            let expected = -2.0 / 3.0 * (1.0 + (std::f64::consts::PI * t).cos());
            assert!((comp[0].value(t) - expected).abs() < 1e-15);
        }
        assert_eq!(comp[0].value(1.2), 0.0);
        let zero = feedforward_compensator(&v(&[0.0]), 0.5, &v(&[0.0]), &v(&[0.0]), &Signal::Bump).unwrap();
        assert_eq!(zero[0].value(0.0), 0.0);
        assert!(matches!(
            feedforward_compensator(&v(&[-3.0]), 0.5, &v(&[0.0]), &v(&[0.0]), &Signal::Bump),
            Err(Error::FunnelViolation(_))
        ));
    }

    #[test]
    fn initial_error_without_feedthrough() {
        let sys = PassiveLti::scalar(-1.0, 1.0, 1.0, 0.0);
        let e0 = initial_error(&sys, &v(&[0.0]), &v(&[0.0]), 0.5, &v(&[1.0]), 1e-12).unwrap();
        assert_eq!(e0, v(&[-1.0]));
        let e0 = initial_error(&sys, &v(&[0.0]), &v(&[0.0]), 0.5, &v(&[0.0]), 1e-12).unwrap();
        assert_eq!(e0, v(&[0.0]));
        assert!(matches!(
            initial_error(&sys, &v(&[0.0]), &v(&[0.0]), 2.0, &v(&[1.0]), 1e-12),
            Err(Error::NoFeasibleInit(_))
        ));
    }

    #[test]
    fn initial_error_with_feedthrough() {
        // e = -e/(1 - 4e²) - 1 on (-1/2, 1/2): bisection on the increasing map
        let g = |e: f64| e + e / (1.0 - 4.0 * e * e) + 1.0;
        let (mut lo, mut hi) = (-0.5 + 1e-15, 0.5 - 1e-15);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle = 0.5 * (lo + hi);
        let sys = PassiveLti::scalar(-1.0, 1.0, -1.0, 1.0);
        let e0 = initial_error(&sys, &v(&[0.0]), &v(&[0.0]), 2.0, &v(&[1.0]), 1e-14).unwrap();
        assert!((e0[0] - oracle).abs() < 1e-12, "{} vs {oracle}", e0[0]);
        assert!(2.0 * e0[0].abs() < 1.0);
    }

    #[test]
    fn non_coercive_feedthrough() {
        let sys = PassiveLti::scalar(-1.0, 1.0, 1.0, -1.0);
        assert!(matches!(
            initial_error(&sys, &v(&[0.0]), &v(&[0.0]), 1.0, &v(&[0.0]), 1e-12),
            Err(Error::NotCoercive(_))
        ));
    }
}
