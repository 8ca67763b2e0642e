//! The radial map `φ(w) = w / (1 - ‖w‖²)` on the open unit ball and the
//! implicit equation `w = r - P φ(w)` for coercive `P`.
//!
//! The solver follows the constructive existence argument: for `ξ ≥ 1` put
//! `w(ξ) = (ξI + P⁻¹)⁻¹ P⁻¹ r` and `q(ξ) = ‖w(ξ)‖² - 1 + 1/ξ`. Then
//! `q(1) ≥ 0`, `q(ξ) → -1`, and at the root `ξ*` one has `φ(w) = ξ* w`,
//! which makes `w(ξ*)` the solution. Bisection on `q` is the globalizer;
//! damped Newton on `F(w) = w + Pφ(w) - r` polishes the result.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Cap for the upward bracket search on `ξ`.
const XI_MAX: f64 = 1e30;
/// Shared iteration budget of bracketing, bisection and Newton.
const MAX_ITERATIONS: usize = 200;

pub fn phi_map(w: &DVector<f64>) -> Result<DVector<f64>> {
    let nrm2 = w.norm_squared();
    if nrm2 >= 1.0 {
        return Err(Error::DomainViolation(nrm2.sqrt()));
    }
    Ok(w / (1.0 - nrm2))
}

/// Jacobian of [`phi_map`]: `((1 - ‖w‖²) I + 2 w wᵀ) / (1 - ‖w‖²)²`.
pub fn phi_jacobian(w: &DVector<f64>) -> Result<DMatrix<f64>> {
    let nrm2 = w.norm_squared();
    if nrm2 >= 1.0 {
        return Err(Error::DomainViolation(nrm2.sqrt()));
    }
    let s = 1.0 - nrm2;
    let m = w.len();
    Ok((DMatrix::identity(m, m) * s + w * w.transpose() * 2.0) / (s * s))
}

fn min_sym_eig(p: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(p + p.transpose()).eigenvalues.min()
}

/// A square matrix with `P + Pᵀ ⪰ cI`, `c > 0`.
#[derive(Debug, Clone)]
pub struct CoerciveOperator {
    p: DMatrix<f64>,
    p_inv: DMatrix<f64>,
    coercivity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitSolution {
    pub w: DVector<f64>,
    /// Root of `q` found by the bracketing stage.
    pub xi: f64,
    /// `‖w - r + Pφ(w)‖` at the returned `w`.
    pub residual: f64,
    pub iterations: usize,
    pub newton_steps: usize,
}

impl CoerciveOperator {
    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        if !p.is_square() || p.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!("P must be square, got {:?}", p.shape())));
        }
        let coercivity = min_sym_eig(&p);
        if !(coercivity > 0.0) {
            return Err(Error::NotCoercive(coercivity));
        }
        let p_inv = p.clone().try_inverse().ok_or(Error::NotCoercive(coercivity))?;
        Ok(Self { p, p_inv, coercivity })
    }

    pub fn scalar(p: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(1, 1, p))
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    /// Smallest eigenvalue of `P + Pᵀ`.
    pub fn coercivity(&self) -> f64 {
        self.coercivity
    }

    /// Smallest eigenvalue `c₀` of `P⁻¹ + P⁻ᵀ`.
    pub fn inverse_coercivity(&self) -> f64 {
        min_sym_eig(&self.p_inv)
    }

    /// Spectral norm of `P⁻¹`.
    pub fn inverse_norm(&self) -> f64 {
        self.p_inv.clone().svd(false, false).singular_values.max()
    }

    /// Lipschitz constant of the solution map `r ↦ w(r)`:
    /// `‖P⁻¹‖ / (1 + c₀/2)`.
    ///
    /// Pairing `Δw` with `P⁻¹ΔF` gives
    /// `Re⟨Δw, P⁻¹Δw⟩ + Re⟨Δw, Δφ⟩ ≤ ‖P⁻¹‖ ‖Δw‖ ‖ΔF‖`, where the first term
    /// is at least `(c₀/2)‖Δw‖²` and the second at least `‖Δw‖²` because `φ`
    /// is the gradient of the 1-strongly convex `-½ ln(1 - ‖w‖²)`.
    pub fn lipschitz_bound(&self) -> f64 {
        self.inverse_norm() / (1.0 + 0.5 * self.inverse_coercivity())
    }

    /// `‖P⁻¹‖ / c₀`, the constant obtained when the monotonicity of `φ` is
    /// only used qualitatively and `c₀` is read from `P⁻¹ + P⁻ᵀ ⪰ c₀I`.
    /// It is a valid bound only when `c₀ ≤ 2`.
    pub fn unscaled_lipschitz_bound(&self) -> f64 {
        self.inverse_norm() / self.inverse_coercivity()
    }

    /// `w(ξ) = (ξI + P⁻¹)⁻¹ P⁻¹ r`.
    pub fn radial_candidate(&self, xi: f64, p_inv_r: &DVector<f64>) -> DVector<f64> {
        let m = self.dim();
        let shifted = &self.p_inv + DMatrix::identity(m, m) * xi;
        shifted
            .lu()
            .solve(p_inv_r)
            .expect("ξI + P⁻¹ is invertible for coercive P and ξ > 0")
    }

    /// `F(w) = w + Pφ(w) - r`.
    pub fn residual_vector(&self, w: &DVector<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(w + &self.p * phi_map(w)? - r)
    }

    pub fn solve_implicit(&self, r: &DVector<f64>, tol: f64) -> Result<ImplicitSolution> {
        self.solve_implicit_from(r, tol, 1.0)
    }

    /// As [`CoerciveOperator::solve_implicit`], starting the bracket search
    /// at `xi_start` (clamped to `≥ 1`).
    pub fn solve_implicit_from(&self, r: &DVector<f64>, tol: f64, xi_start: f64) -> Result<ImplicitSolution> {
        if r.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "r has length {}, P is {}x{}",
                r.len(),
                self.dim(),
                self.dim()
            )));
        }
        let target = tol * (1.0 + r.norm());
        if r.iter().all(|&v| v == 0.0) {
            return Ok(ImplicitSolution {
                w: DVector::zeros(self.dim()),
                xi: 1.0,
                residual: 0.0,
                iterations: 0,
                newton_steps: 0,
            });
        }
        let (xi, w0, mut iterations) = self.bracket_and_bisect(r, xi_start)?;

        let mut w = w0;
        let mut res = self.residual_vector(&w, r)?;
        let mut res_norm = res.norm();
        let mut newton_steps = 0;
        loop {
            let jac = DMatrix::identity(self.dim(), self.dim()) + &self.p * phi_jacobian(&w)?;
            // Near the sphere one ulp of w moves the residual by about ‖J‖·ε.
            let floor = 8.0 * f64::EPSILON * (jac.norm() * w.norm() + r.norm());
            if res_norm <= target.max(floor) {
                break;
            }
            if iterations >= MAX_ITERATIONS {
                return Err(Error::MaxIterations {
                    iterations,
                    residual: res_norm,
                });
            }
            iterations += 1;
            newton_steps += 1;
            let Some(step) = jac.lu().solve(&res) else {
                return Err(Error::MaxIterations {
                    iterations,
                    residual: res_norm,
                });
            };
            let mut damping = 1.0;
            let mut accepted = false;
            while damping > 1e-12 {
                let trial = &w - &step * damping;
                if trial.norm_squared() < 1.0 {
                    let trial_res = self.residual_vector(&trial, r)?;
                    let trial_norm = trial_res.norm();
                    if trial_norm < res_norm {
                        w = trial;
                        res = trial_res;
                        res_norm = trial_norm;
                        accepted = true;
                        break;
                    }
                }
                damping *= 0.5;
            }
            if !accepted {
                return Err(Error::MaxIterations {
                    iterations,
                    residual: res_norm,
                });
            }
        }
        Ok(ImplicitSolution {
            w,
            xi,
            residual: res_norm,
            iterations,
            newton_steps,
        })
    }

    /// Brackets the unique root of `q` and bisects it to relative width 1e-14.
    fn bracket_and_bisect(&self, r: &DVector<f64>, xi_start: f64) -> Result<(f64, DVector<f64>, usize)> {
        let p_inv_r = &self.p_inv * r;
        let q = |xi: f64| self.radial_candidate(xi, &p_inv_r).norm_squared() - 1.0 + 1.0 / xi;
        let mut iterations = 0;
        let stalled = |iterations, xi: f64| Error::MaxIterations {
            iterations,
            residual: xi,
        };

        let start = xi_start.max(1.0);
        let (mut lo, mut hi) = if q(start) >= 0.0 {
            let mut lo = start;
            let mut hi = 2.0 * start;
            while q(hi) >= 0.0 {
                iterations += 1;
                if hi > XI_MAX || iterations >= MAX_ITERATIONS {
                    return Err(stalled(iterations, hi));
                }
                lo = hi;
                hi *= 2.0;
            }
            (lo, hi)
        } else {
            let mut hi = start;
            let mut lo = (0.5 * start).max(1.0);
            while q(lo) < 0.0 {
                iterations += 1;
                if lo == 1.0 || iterations >= MAX_ITERATIONS {
                    // q(1) ≥ 0 always holds; only rounding can land here.
                    break;
                }
                hi = lo;
                lo = (0.5 * lo).max(1.0);
            }
            (lo, hi)
        };

        while hi - lo > 1e-14 * hi {
            iterations += 1;
            if iterations >= MAX_ITERATIONS {
                return Err(stalled(iterations, hi));
            }
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if q(mid) >= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // The upper end keeps ‖w‖² ≤ 1 - 1/ξ strictly inside the ball.
        let xi = hi;
        let mut w = self.radial_candidate(xi, &p_inv_r);
        if w.norm_squared() >= 1.0 {
            w = self.radial_candidate(lo, &p_inv_r);
        }
        Ok((xi, w, iterations))
    }
}
