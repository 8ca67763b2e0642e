//! Finite-dimensional impedance-passive systems
//!
//! ```text
//!   ẋ = A x + B u,   y = C x + D u,   ‖x‖² = xᵀ H x
//! ```
//!
//! with numerical checks of the standing assumptions: the KYP block
//! inequality for a known storage Gram `H`, its strictly dissipative shift,
//! and coercivity of the transfer function at a real probe.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Complex64 = Complex<f64>;

/// Relative tolerance used by the checks when the caller does not pick one.
pub const DEFAULT_TOL: f64 = 1e-8;

/// Default real probe for the coercivity check.
pub const DEFAULT_PROBE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PassiveLti {
    h: DMatrix<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassivityVerdict {
    /// Largest eigenvalue of the symmetric part of the KYP block.
    pub max_kyp_eig: f64,
    /// `2‖M‖` for the generator `M = [[HA, HB], [-C, -D]]` with `W = M + Mᵀ`;
    /// the scale of the rounding noise in `W`.
    pub scale: f64,
    pub passive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrictPassivity {
    pub alpha: f64,
    pub max_eig: f64,
    /// `-max_eig`; non-negative when the shifted inequality holds.
    pub margin: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassivityReport {
    pub max_kyp_eig: f64,
    pub strict_alpha_eig: f64,
    pub coercivity_c: f64,
    pub probe_lambda: f64,
}

impl PassiveLti {
    /// Builds a system after checking that all shapes agree. The passivity
    /// and Gram properties are not assumed; see [`PassiveLti::check_passivity`].
    pub fn new(
        h: DMatrix<f64>,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        let shape_ok = n > 0
            && m > 0
            && a.ncols() == n
            && h.shape() == (n, n)
            && b.nrows() == n
            && c.shape() == (m, n)
            && d.shape() == (m, m);
        if !shape_ok {
            return Err(Error::DimensionMismatch(format!(
                "H {:?}, A {:?}, B {:?}, C {:?}, D {:?}",
                h.shape(),
                a.shape(),
                b.shape(),
                c.shape(),
                d.shape()
            )));
        }
        Ok(Self { h, a, b, c, d })
    }

    /// Scalar system with unit Gram.
    pub fn scalar(a: f64, b: f64, c: f64, d: f64) -> Self {
        let s = |v| DMatrix::from_element(1, 1, v);
        Self::new(s(1.0), s(a), s(b), s(c), s(d)).expect("1x1 shapes")
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    /// Squared state norm `xᵀHx`.
    pub fn energy(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "state has length {}, system order is {}",
                x.len(),
                self.n()
            )));
        }
        Ok(x.dot(&(&self.h * x)))
    }

    /// `P(λ) = C (λI - A)⁻¹ B + D`.
    pub fn transfer_eval(&self, lambda: Complex64) -> Result<DMatrix<Complex64>> {
        let n = self.n();
        let resolvent = DMatrix::<Complex64>::from_fn(n, n, |i, j| {
            let diag = if i == j { lambda } else { Complex64::new(0.0, 0.0) };
            diag - Complex64::new(self.a[(i, j)], 0.0)
        });
        let lu = resolvent.lu();
        let u = lu.u();
        let pivots: Vec<f64> = (0..n).map(|i| u[(i, i)].norm()).collect();
        let max_pivot = pivots.iter().cloned().fold(0.0, f64::max);
        let min_pivot = pivots.iter().cloned().fold(f64::INFINITY, f64::min);
        let singular = || Error::SingularResolvent {
            re: lambda.re,
            im: lambda.im,
        };
        if !(min_pivot > 1e-14 * max_pivot.max(1.0)) {
            return Err(singular());
        }
        let bc = self.b.map(|v| Complex64::new(v, 0.0));
        let x = lu.solve(&bc).ok_or_else(singular)?;
        let cc = self.c.map(|v| Complex64::new(v, 0.0));
        let dc = self.d.map(|v| Complex64::new(v, 0.0));
        Ok(cc * x + dc)
    }

    /// The KYP block with the dissipation shift `2αH` on the state block;
    /// `alpha = 0` gives the plain passivity block.
    pub fn kyp_block(&self, alpha: f64) -> DMatrix<f64> {
        let (n, m) = (self.n(), self.m());
        let ha = &self.h * &self.a;
        let top_left = &ha + ha.transpose() + &self.h * (2.0 * alpha);
        let top_right = &self.h * &self.b - self.c.transpose();
        let bottom_right = -(&self.d + self.d.transpose());
        let mut w = DMatrix::zeros(n + m, n + m);
        w.view_mut((0, 0), (n, n)).copy_from(&top_left);
        w.view_mut((0, n), (n, m)).copy_from(&top_right);
        w.view_mut((n, 0), (m, n)).copy_from(&top_right.transpose());
        w.view_mut((n, n), (m, m)).copy_from(&bottom_right);
        w
    }

    fn check_gram(&self, tol: f64) -> Result<()> {
        let asym = (&self.h - self.h.transpose()).norm();
        if asym > tol * (1.0 + self.h.norm()) {
            return Err(Error::NotSymmetric(asym));
        }
        let sym = (&self.h + self.h.transpose()) * 0.5;
        let min_eig = SymmetricEigen::new(sym).eigenvalues.min();
        if min_eig <= 0.0 {
            return Err(Error::NotPositiveDefinite(min_eig));
        }
        Ok(())
    }

    /// `2‖M‖` (spectral) with `M = [[HA + αH, HB], [-C, -D]]`, so that the
    /// KYP block is `M + Mᵀ`. A lossless system has `W = 0` in exact
    /// arithmetic, so tolerances scale with `M` rather than with `W`.
    pub fn kyp_scale(&self, alpha: f64) -> f64 {
        let (n, m) = (self.n(), self.m());
        let mut g = DMatrix::zeros(n + m, n + m);
        g.view_mut((0, 0), (n, n)).copy_from(&(&self.h * &self.a + &self.h * alpha));
        g.view_mut((0, n), (n, m)).copy_from(&(&self.h * &self.b));
        g.view_mut((n, 0), (m, n)).copy_from(&(-&self.c));
        g.view_mut((n, n), (m, m)).copy_from(&(-&self.d));
        2.0 * g.singular_values().max()
    }

    /// Dense symmetric eigensolve of the KYP block. The system is reported
    /// passive iff its largest eigenvalue is at most `tol·(1 + scale)`.
    pub fn check_passivity(&self, tol: f64) -> Result<PassivityVerdict> {
        self.check_gram(tol)?;
        let max_eig = sym_max(&self.kyp_block(0.0));
        let scale = self.kyp_scale(0.0);
        Ok(PassivityVerdict {
            max_kyp_eig: max_eig,
            scale,
            passive: max_eig <= tol * (1.0 + scale),
        })
    }

    pub fn check_strict_passivity(&self, alpha: f64, tol: f64) -> Result<StrictPassivity> {
        if !(alpha >= 0.0) {
            return Err(Error::DimensionMismatch(format!(
                "dissipation rate must be non-negative, got {alpha}"
            )));
        }
        self.check_gram(tol)?;
        let max_eig = sym_max(&self.kyp_block(alpha));
        Ok(StrictPassivity {
            alpha,
            max_eig,
            margin: -max_eig,
            holds: max_eig <= tol * (1.0 + self.kyp_scale(alpha)),
        })
    }

    /// Smallest eigenvalue of `P(λ) + P(λ)*` at a real probe `λ > 0`.
    pub fn check_coercivity(&self, lambda: f64) -> Result<f64> {
        let p = self.transfer_eval(Complex64::new(lambda, 0.0))?;
        let herm = &p + p.adjoint();
        Ok(SymmetricEigen::new(herm).eigenvalues.min())
    }

    pub fn assumption_report(&self, alpha: f64, probe: f64, tol: f64) -> Result<PassivityReport> {
        Ok(PassivityReport {
            max_kyp_eig: self.check_passivity(tol)?.max_kyp_eig,
            strict_alpha_eig: self.check_strict_passivity(alpha, tol)?.max_eig,
            coercivity_c: self.check_coercivity(probe)?,
            probe_lambda: probe,
        })
    }

    /// The same system in coordinates `x = T z`.
    pub fn similarity(&self, t: &DMatrix<f64>) -> Result<Self> {
        let n = self.n();
        if t.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!(
                "transform is {:?}, system order is {n}",
                t.shape()
            )));
        }
        let lu = t.clone().lu();
        let a_t = &self.a * t;
        let a = lu.solve(&a_t).ok_or(Error::DimensionMismatch("singular transform".into()))?;
        let b = lu.solve(&self.b).ok_or(Error::DimensionMismatch("singular transform".into()))?;
        Self::new(t.transpose() * &self.h * t, a, b, &self.c * t, self.d.clone())
    }
}

/// Largest eigenvalue and spectral norm of the symmetric part of `w`.
fn sym_max(w: &DMatrix<f64>) -> f64 {
    let sym = (w + w.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.max()
}
