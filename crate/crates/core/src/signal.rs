//! Smooth scalar signals with analytic first and second derivatives.

use std::f64::consts::PI;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Value and first two time derivatives at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

/// A closed family of `W^{2,∞}` signals on `[0, ∞)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Signal {
    Constant {
        value: f64,
    },
    /// `amplitude · cos(omega·t + phase)`
    Cos {
        omega: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// `Σ coeffs[k] t^k`
    Polynomial {
        coeffs: Vec<f64>,
    },
    /// Raised cosine `½(1 + cos πt)` on `[0, 1]`, zero afterwards.
    Bump,
    Sum {
        terms: Vec<Signal>,
    },
    Product {
        factors: Vec<Signal>,
    },
    Scale {
        factor: f64,
        signal: Box<Signal>,
    },
}

fn one() -> f64 {
    1.0
}

impl Signal {
    pub fn zero() -> Self {
        Signal::Constant { value: 0.0 }
    }

    pub fn constant(value: f64) -> Self {
        Signal::Constant { value }
    }

    pub fn cos(omega: f64) -> Self {
        Signal::Cos {
            omega,
            phase: 0.0,
            amplitude: 1.0,
        }
    }

    pub fn scaled(self, factor: f64) -> Self {
        Signal::Scale {
            factor,
            signal: Box::new(self),
        }
    }

    pub fn plus(self, other: Signal) -> Self {
        match self {
            Signal::Sum { mut terms } => {
                terms.push(other);
                Signal::Sum { terms }
            }
            s => Signal::Sum {
                terms: vec![s, other],
            },
        }
    }

    pub fn eval(&self, t: f64) -> Jet {
        match self {
            Signal::Constant { value } => Jet {
                value: *value,
                d1: 0.0,
                d2: 0.0,
            },
            Signal::Cos {
                omega,
                phase,
                amplitude,
            } => {
                let (s, c) = (omega * t + phase).sin_cos();
                Jet {
                    value: amplitude * c,
                    d1: -amplitude * omega * s,
                    d2: -amplitude * omega * omega * c,
                }
            }
            Signal::Polynomial { coeffs } => {
                // Horner on value, first and second derivative together.
                let mut jet = Jet::default();
                for &a in coeffs.iter().rev() {
                    jet.d2 = jet.d2 * t + 2.0 * jet.d1;
                    jet.d1 = jet.d1 * t + jet.value;
                    jet.value = jet.value * t + a;
                }
                jet
            }
            Signal::Bump => {
                if (0.0..=1.0).contains(&t) {
                    let (s, c) = (PI * t).sin_cos();
                    Jet {
                        value: 0.5 * (1.0 + c),
                        d1: -0.5 * PI * s,
                        d2: -0.5 * PI * PI * c,
                    }
                } else {
                    Jet::default()
                }
            }
            Signal::Sum { terms } => terms.iter().fold(Jet::default(), |acc, s| {
                let j = s.eval(t);
                Jet {
                    value: acc.value + j.value,
                    d1: acc.d1 + j.d1,
                    d2: acc.d2 + j.d2,
                }
            }),
            Signal::Product { factors } => factors.iter().fold(
                Jet {
                    value: 1.0,
                    d1: 0.0,
                    d2: 0.0,
                },
                |acc, s| {
                    let j = s.eval(t);
                    Jet {
                        value: acc.value * j.value,
                        d1: acc.d1 * j.value + acc.value * j.d1,
                        d2: acc.d2 * j.value + 2.0 * acc.d1 * j.d1 + acc.value * j.d2,
                    }
                },
            ),
            Signal::Scale { factor, signal } => {
                let j = signal.eval(t);
                Jet {
                    value: factor * j.value,
                    d1: factor * j.d1,
                    d2: factor * j.d2,
                }
            }
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.eval(t).value
    }

    /// Whether the signal vanishes for all sufficiently large `t`.
    pub fn has_compact_support(&self) -> bool {
        match self {
            Signal::Constant { value } => *value == 0.0,
            Signal::Cos { amplitude, .. } => *amplitude == 0.0,
            Signal::Polynomial { coeffs } => coeffs.iter().all(|&c| c == 0.0),
            Signal::Bump => true,
            Signal::Sum { terms } => terms.iter().all(Signal::has_compact_support),
            Signal::Product { factors } => factors.iter().any(Signal::has_compact_support),
            Signal::Scale { factor, signal } => *factor == 0.0 || signal.has_compact_support(),
        }
    }

    /// Whether value and both derivatives stay bounded on `[0, ∞)`.
    /// Non-constant polynomials are only admissible under a compactly
    /// supported factor.
    pub fn is_bounded(&self) -> bool {
        match self {
            Signal::Constant { value } => value.is_finite(),
            Signal::Cos {
                omega,
                phase,
                amplitude,
            } => omega.is_finite() && phase.is_finite() && amplitude.is_finite(),
            Signal::Polynomial { coeffs } => coeffs.iter().skip(1).all(|&c| c == 0.0),
            Signal::Bump => true,
            Signal::Sum { terms } => terms.iter().all(Signal::is_bounded),
            Signal::Product { factors } => {
                factors.iter().all(Signal::is_bounded) || factors.iter().any(Signal::has_compact_support)
            }
            Signal::Scale { factor, signal } => *factor == 0.0 || (factor.is_finite() && signal.is_bounded()),
        }
    }
}

/// Evaluates one scalar signal per component.
pub fn eval_vector(signals: &[Signal], t: f64) -> DVector<f64> {
    DVector::from_iterator(signals.len(), signals.iter().map(|s| s.value(t)))
}
