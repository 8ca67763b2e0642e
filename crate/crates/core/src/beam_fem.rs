//! Clamped–free Euler–Bernoulli beam with cubic Hermite elements.
//!
//! Each node carries two degrees of freedom, the transverse displacement
//! `w` and the slope `w'`. The left end is clamped by deleting both DOFs of
//! node 0; the free right end needs no constraint (vanishing moment and
//! shear are natural boundary conditions).
//!
//! The semidiscrete model is `M q̈ + S q = b u`, observed through the
//! co-located velocity `y = bᵀ q̇`. Its stored energy `qᵀSq + q̇ᵀMq̇`
//! discretizes `∫ EI κ² + ρ⁻¹ p² dξ`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::passive_lti::PassiveLti;

/// 4-point Gauss–Legendre rule on [-1, 1]; exact for polynomials of degree 7.
pub(crate) const GAUSS4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
];

/// A material coefficient. Only constants can be assembled; profiles are
/// part of the config schema so that files using them fail with a clear error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficient {
    Constant(f64),
    Profile { samples: Vec<[f64; 2]> },
}

impl Default for Coefficient {
    fn default() -> Self {
        Coefficient::Constant(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Actuation {
    /// Force density `1_[from, to]`, observed as the co-located weighted velocity.
    Distributed { from: f64, to: f64 },
    /// Point force at `at`, observed as the velocity there.
    Point { at: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    #[serde(default = "unit_length")]
    pub length: f64,
    #[serde(default)]
    pub flexural_rigidity: Coefficient,
    #[serde(default)]
    pub density: Coefficient,
    pub n_elements: usize,
    pub actuation: Actuation,
}

fn unit_length() -> f64 {
    1.0
}

impl BeamConfig {
    /// Unit beam (`ℓ = EI = ρ = 1`).
    pub fn unit(n_elements: usize, actuation: Actuation) -> Self {
        Self {
            length: 1.0,
            flexural_rigidity: Coefficient::Constant(1.0),
            density: Coefficient::Constant(1.0),
            n_elements,
            actuation,
        }
    }

    fn constants(&self) -> Result<(f64, f64)> {
        let invalid = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.length > 0.0 && self.length.is_finite()) {
            return invalid("length must be positive");
        }
        if self.n_elements < 2 {
            return invalid("at least two elements are required");
        }
        let (ei, rho) = match (&self.flexural_rigidity, &self.density) {
            (Coefficient::Constant(ei), Coefficient::Constant(rho)) => (*ei, *rho),
            _ => return invalid("spatially varying EI or ρ cannot be assembled; use constants"),
        };
        if !(ei > 0.0 && rho > 0.0) {
            return invalid("EI and ρ must be positive");
        }
        match self.actuation {
            Actuation::Distributed { from, to } => {
                if !(0.0 <= from && from < to && to <= self.length) {
                    return invalid("distributed actuation needs 0 ≤ from < to ≤ length");
                }
            }
            Actuation::Point { at } => {
                if !(0.0 < at && at <= self.length) {
                    return invalid("point actuation needs 0 < at ≤ length");
                }
            }
        }
        Ok((ei, rho))
    }
}

/// Shape functions of one element and their derivatives in global units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HermiteBasis {
    pub values: [f64; 4],
    pub d1: [f64; 4],
    pub d2: [f64; 4],
}

/// Cubic Hermite shape functions at local coordinate `s ∈ [0, 1]` of an
/// element of length `h`, ordered `(w_left, w'_left, w_right, w'_right)`.
pub fn hermite_basis(h: f64, s: f64) -> HermiteBasis {
    let s2 = s * s;
    let s3 = s2 * s;
    HermiteBasis {
        values: [
            1.0 - 3.0 * s2 + 2.0 * s3,
            h * (s - 2.0 * s2 + s3),
            3.0 * s2 - 2.0 * s3,
            h * (s3 - s2),
        ],
        d1: [
            (-6.0 * s + 6.0 * s2) / h,
            1.0 - 4.0 * s + 3.0 * s2,
            (6.0 * s - 6.0 * s2) / h,
            3.0 * s2 - 2.0 * s,
        ],
        d2: [
            (-6.0 + 12.0 * s) / (h * h),
            (-4.0 + 6.0 * s) / h,
            (6.0 - 12.0 * s) / (h * h),
            (6.0 * s - 2.0) / h,
        ],
    }
}

/// Consistent element mass matrix `(ρh/420)·[...]`.
pub fn element_mass(h: f64, rho: f64) -> [[f64; 4]; 4] {
    let f = rho * h / 420.0;
    let h2 = h * h;
    let m = [
        [156.0, 22.0 * h, 54.0, -13.0 * h],
        [22.0 * h, 4.0 * h2, 13.0 * h, -3.0 * h2],
        [54.0, 13.0 * h, 156.0, -22.0 * h],
        [-13.0 * h, -3.0 * h2, -22.0 * h, 4.0 * h2],
    ];
    m.map(|row| row.map(|v| f * v))
}

/// Element bending stiffness `(EI/h³)·[...]`.
pub fn element_stiffness(h: f64, ei: f64) -> [[f64; 4]; 4] {
    let f = ei / (h * h * h);
    let h2 = h * h;
    let k = [
        [12.0, 6.0 * h, -12.0, 6.0 * h],
        [6.0 * h, 4.0 * h2, -6.0 * h, 2.0 * h2],
        [-12.0, -6.0 * h, 12.0, -6.0 * h],
        [6.0 * h, 2.0 * h2, -6.0 * h, 4.0 * h2],
    ];
    k.map(|row| row.map(|v| f * v))
}

/// Output of the assembly, before conversion to first order.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderSystem {
    pub mass: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
    pub load: DVector<f64>,
    /// Per node, the (displacement, slope) DOF indices; `None` for clamped nodes.
    pub dof_map: Vec<Option<(usize, usize)>>,
    pub element_length: f64,
    pub flexural_rigidity: f64,
}

/// Matrices of the unconstrained (free–free) beam with all `2(n_e+1)` DOFs.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeBeam {
    pub mass: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
    pub load: DVector<f64>,
    pub element_length: f64,
}

pub fn assemble_unconstrained(cfg: &BeamConfig) -> Result<FreeBeam> {
    let (ei, rho) = cfg.constants()?;
    let ne = cfg.n_elements;
    let h = cfg.length / ne as f64;
    let n = 2 * (ne + 1);
    let me = element_mass(h, rho);
    let ke = element_stiffness(h, ei);
    let mut mass = DMatrix::zeros(n, n);
    let mut stiffness = DMatrix::zeros(n, n);
    for e in 0..ne {
        let base = 2 * e;
        for i in 0..4 {
            for j in 0..4 {
                mass[(base + i, base + j)] += me[i][j];
                stiffness[(base + i, base + j)] += ke[i][j];
            }
        }
    }
    let load = match cfg.actuation {
        Actuation::Distributed { from, to } => distributed_load(ne, h, from, to),
        Actuation::Point { at } => point_load(ne, h, at),
    };
    Ok(FreeBeam {
        mass,
        stiffness,
        load,
        element_length: h,
    })
}

fn distributed_load(ne: usize, h: f64, from: f64, to: f64) -> DVector<f64> {
    let mut load = DVector::zeros(2 * (ne + 1));
    for e in 0..ne {
        let left = e as f64 * h;
        let lo = from.max(left);
        let hi = to.min(left + h);
        if hi <= lo {
            continue;
        }
        // Gauss points on the covered part only, so the indicator is never sampled.
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        for (x, wgt) in GAUSS4 {
            let xi = mid + half * x;
            let basis = hermite_basis(h, (xi - left) / h);
            for k in 0..4 {
                load[2 * e + k] += wgt * half * basis.values[k];
            }
        }
    }
    load
}

fn point_load(ne: usize, h: f64, at: f64) -> DVector<f64> {
    let mut load = DVector::zeros(2 * (ne + 1));
    let r = at / h;
    let nearest = r.round();
    if (r - nearest).abs() <= 1e-10 * r.max(1.0) {
        load[2 * (nearest as usize).min(ne)] = 1.0;
        return load;
    }
    let e = (r.floor() as usize).min(ne - 1);
    let s = ((at - e as f64 * h) / h).clamp(0.0, 1.0);
    let basis = hermite_basis(h, s);
    for k in 0..4 {
        load[2 * e + k] = basis.values[k];
    }
    load
}

/// Assembles mass, stiffness and load with the clamp at ξ = 0 applied by
/// deleting the two DOFs of node 0.
pub fn assemble(cfg: &BeamConfig) -> Result<SecondOrderSystem> {
    let free = assemble_unconstrained(cfg)?;
    let n = free.load.len();
    let keep = n - 2;
    let dof_map = (0..=cfg.n_elements)
        .map(|node| (node > 0).then(|| (2 * node - 2, 2 * node - 1)))
        .collect();
    Ok(SecondOrderSystem {
        mass: free.mass.view((2, 2), (keep, keep)).into_owned(),
        stiffness: free.stiffness.view((2, 2), (keep, keep)).into_owned(),
        load: free.load.rows(2, keep).into_owned(),
        dof_map,
        element_length: free.element_length,
        flexural_rigidity: cfg.constants()?.0,
    })
}

/// The system in coordinates where the energy Gram is the identity and the
/// drift is block-diagonal in the natural modes.
#[derive(Debug, Clone)]
pub struct ModalForm {
    pub system: PassiveLti,
    /// Natural angular frequencies, ascending.
    pub frequencies: DVector<f64>,
    /// `x = T z` maps modal states `z = (Ωη, η̇)` to physical `(q, q̇)`.
    pub transform: DMatrix<f64>,
}

impl SecondOrderSystem {
    pub fn n_dof(&self) -> usize {
        self.load.len()
    }

    fn mass_cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(self.mass.clone()).ok_or(Error::SingularMass)
    }

    /// First-order form with state `(q, q̇)`:
    /// `A = [[0, I], [-M⁻¹S, 0]]`, `B = [0; M⁻¹b]`, `C = [0, bᵀ]`, `D = 0`,
    /// `H = diag(S, M)`.
    pub fn to_passive_lti(&self) -> Result<PassiveLti> {
        let k = self.n_dof();
        let chol = self.mass_cholesky()?;
        let minv_s = chol.solve(&self.stiffness);
        let minv_b = chol.solve(&self.load);
        let mut a = DMatrix::zeros(2 * k, 2 * k);
        a.view_mut((0, k), (k, k)).fill_with_identity();
        a.view_mut((k, 0), (k, k)).copy_from(&(-minv_s));
        let mut b = DMatrix::zeros(2 * k, 1);
        b.view_mut((k, 0), (k, 1)).copy_from(&minv_b);
        let mut c = DMatrix::zeros(1, 2 * k);
        c.view_mut((0, k), (1, k)).copy_from(&self.load.transpose());
        let mut h = DMatrix::zeros(2 * k, 2 * k);
        h.view_mut((0, 0), (k, k)).copy_from(&self.stiffness);
        h.view_mut((k, k), (k, k)).copy_from(&self.mass);
        PassiveLti::new(h, a, b, c, DMatrix::zeros(1, 1))
    }

    /// `S⁻¹` in closed form: the cantilever's displacement and slope at
    /// node `i` caused by a unit force or moment at node `j`. Cubic Hermite
    /// elements reproduce these nodal values exactly for constant `EI`, so
    /// this is the inverse of the assembled stiffness without the
    /// cancellation that limits `S` itself to about `ε/h⁴` relative accuracy.
    pub fn flexibility(&self) -> DMatrix<f64> {
        let nodes = self.n_dof() / 2;
        let h = self.element_length;
        let ei = self.flexural_rigidity;
        let mut f = DMatrix::zeros(2 * nodes, 2 * nodes);
        for i in 0..nodes {
            let x = (i + 1) as f64 * h;
            for j in 0..nodes {
                let a = (j + 1) as f64 * h;
                let (lo, hi) = if x <= a { (x, a) } else { (a, x) };
                // force at a
                let w_f = lo * lo * (3.0 * hi - lo) / 6.0;
                let th_f = if x <= a { x * (2.0 * a - x) / 2.0 } else { a * a / 2.0 };
                // moment at a
                let w_m = if x <= a { x * x / 2.0 } else { a * (2.0 * x - a) / 2.0 };
                let th_m = lo;
                f[(2 * i, 2 * j)] = w_f / ei;
                f[(2 * i + 1, 2 * j)] = th_f / ei;
                f[(2 * i, 2 * j + 1)] = w_m / ei;
                f[(2 * i + 1, 2 * j + 1)] = th_m / ei;
            }
        }
        f
    }

    /// Solves `S φ = ω² M φ` with `ΦᵀMΦ = I`. Returns squared frequencies in
    /// ascending order together with the mass-normalized mode matrix.
    ///
    /// The eigenproblem is posed for `μ = 1/ω²`, `LᵀS⁻¹L ψ = μ ψ` with
    /// `M = LLᵀ`, so rounding is relative to the lowest frequency.
    fn modes(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let l = self.mass_cholesky()?.l();
        let reduced = l.transpose() * self.flexibility() * &l;
        let reduced = (&reduced + reduced.transpose()) * 0.5;
        let eig = SymmetricEigen::new(reduced);
        if eig.eigenvalues.iter().any(|&mu| !(mu > 0.0)) {
            return Err(Error::InvalidConfig("stiffness is not positive definite".into()));
        }
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let omega2 = DVector::from_iterator(order.len(), order.iter().map(|&i| 1.0 / eig.eigenvalues[i]));
        let psi = DMatrix::from_fn(order.len(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
        let phi = l.transpose().solve_upper_triangular(&psi).ok_or(Error::SingularMass)?;
        Ok((omega2, phi))
    }

    /// Natural angular frequencies `ω_k`, ascending.
    pub fn natural_frequencies(&self) -> Result<DVector<f64>> {
        Ok(self.modes()?.0.map(f64::sqrt))
    }

    /// Modal coordinates `z = (Ωη, η̇)` with `q = Φη`: `A = [[0, Ω], [-Ω, 0]]`,
    /// `B = [0; Φᵀb]`, `C = Bᵀ`, `H = I`. The similarity to
    /// [`SecondOrderSystem::to_passive_lti`] is exact; no mode is dropped.
    pub fn modal_form(&self) -> Result<ModalForm> {
        let k = self.n_dof();
        let (omega2, phi) = self.modes()?;
        let omega = omega2.map(f64::sqrt);
        let modal_load = phi.transpose() * &self.load;
        let mut a = DMatrix::zeros(2 * k, 2 * k);
        for i in 0..k {
            a[(i, k + i)] = omega[i];
            a[(k + i, i)] = -omega[i];
        }
        let mut b = DMatrix::zeros(2 * k, 1);
        b.view_mut((k, 0), (k, 1)).copy_from(&modal_load);
        let c = b.transpose();
        let mut t = DMatrix::zeros(2 * k, 2 * k);
        let mut phi_scaled = phi.clone();
        for (j, mut col) in phi_scaled.column_iter_mut().enumerate() {
            col /= omega[j];
        }
        t.view_mut((0, 0), (k, k)).copy_from(&phi_scaled);
        t.view_mut((k, k), (k, k)).copy_from(&phi);
        Ok(ModalForm {
            system: PassiveLti::new(DMatrix::identity(2 * k, 2 * k), a, b, c, DMatrix::zeros(1, 1))?,
            frequencies: omega,
            transform: t,
        })
    }
}
