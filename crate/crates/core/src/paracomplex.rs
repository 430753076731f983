//! Para-complex numbers a + k·b with k² = +1, and a minimal exterior algebra
//! over R²ⁿ with para-complex coefficients.

use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::cost::CostModel;
use crate::error::Result;
use crate::geometry::conformal_factor;

/// Stored in the null basis: z = a·τ + b·τ̄ with τ = (1 + k)/2, τ̄ = (1 − k)/2.
/// Products are then componentwise and the para-norm is a single product a·b,
/// which avoids the cancellation in cosh² − sinh².
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ParaComplex {
    tau: f64,
    tau_bar: f64,
}

impl ParaComplex {
    pub const ZERO: Self = Self::from_null(0.0, 0.0);
    pub const ONE: Self = Self::from_null(1.0, 1.0);
    pub const K: Self = Self::from_null(1.0, -1.0);

    /// re + k·im
    pub const fn new(re: f64, im: f64) -> Self {
        Self::from_null(re + im, re - im)
    }

    pub const fn real(re: f64) -> Self {
        Self::from_null(re, re)
    }

    /// τ = (1 + k)/2
    pub const fn tau() -> Self {
        Self::from_null(1.0, 0.0)
    }

    /// τ̄ = (1 − k)/2
    pub const fn tau_bar() -> Self {
        Self::from_null(0.0, 1.0)
    }

    /// a·τ + b·τ̄
    pub const fn from_null(a: f64, b: f64) -> Self {
        Self { tau: a, tau_bar: b }
    }

    /// Coefficients (a, b) with self = a·τ + b·τ̄.
    pub fn null_components(&self) -> (f64, f64) {
        (self.tau, self.tau_bar)
    }

    pub fn re(&self) -> f64 {
        0.5 * (self.tau + self.tau_bar)
    }

    pub fn im(&self) -> f64 {
        0.5 * (self.tau - self.tau_bar)
    }

    /// k ↦ −k swaps τ and τ̄.
    pub fn conj(&self) -> Self {
        Self::from_null(self.tau_bar, self.tau)
    }

    /// re² − im² = a·b; an indefinite quadratic form.
    pub fn para_norm_sq(&self) -> f64 {
        self.tau * self.tau_bar
    }

    /// Size used for residuals: the larger null-basis coefficient. Vanishes
    /// only at zero, unlike the para-norm.
    pub fn null_modulus(&self) -> f64 {
        self.tau.abs().max(self.tau_bar.abs())
    }

    /// e^{kθ} = cosh θ + k sinh θ = e^θ τ + e^{−θ} τ̄
    pub fn exp_k(theta: f64) -> Self {
        Self::from_null(theta.exp(), (-theta).exp())
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_null(self.tau * s, self.tau_bar * s)
    }

    pub fn powi(&self, n: u32) -> Self {
        Self::from_null(self.tau.powi(n as i32), self.tau_bar.powi(n as i32))
    }
}

impl Add for ParaComplex {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::from_null(self.tau + o.tau, self.tau_bar + o.tau_bar)
    }
}

impl Sub for ParaComplex {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::from_null(self.tau - o.tau, self.tau_bar - o.tau_bar)
    }
}

impl Neg for ParaComplex {
    type Output = Self;
    fn neg(self) -> Self {
        Self::from_null(-self.tau, -self.tau_bar)
    }
}

impl Mul for ParaComplex {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::from_null(self.tau * o.tau, self.tau_bar * o.tau_bar)
    }
}

/// Differential form with para-complex coefficients. Basis monomials are
/// bitmasks over generators e₀ … e₂ₙ₋₁ (dx¹…dxⁿ, then dx̄¹…dx̄ⁿ), stored with
/// generators in ascending order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Form {
    terms: BTreeMap<u8, ParaComplex>,
}

/// Sign of reordering the concatenation of monomials `a` then `b` into
/// ascending order.
fn merge_sign(a: u8, b: u8) -> f64 {
    let mut swaps = 0u32;
    for j in 0..8 {
        if b & (1 << j) != 0 {
            swaps += (a >> (j + 1)).count_ones();
        }
    }
    if swaps.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

impl Form {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn monomial(generators: &[usize], coeff: ParaComplex) -> Self {
        generators
            .iter()
            .fold(Self::scalar(coeff), |f, &g| f.wedge(&Self::generator(g)))
    }

    pub fn scalar(c: ParaComplex) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(0u8, c);
        Self { terms }
    }

    pub fn generator(g: usize) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(1u8 << g, ParaComplex::ONE);
        Self { terms }
    }

    pub fn coefficient(&self, mask: u8) -> ParaComplex {
        self.terms.get(&mask).copied().unwrap_or_default()
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut terms = self.terms.clone();
        for (m, c) in &o.terms {
            let e = terms.entry(*m).or_default();
            *e = *e + *c;
        }
        Self { terms }
    }

    pub fn scale(&self, c: ParaComplex) -> Self {
        Self {
            terms: self.terms.iter().map(|(m, v)| (*m, *v * c)).collect(),
        }
    }

    /// Conjugate every coefficient (τ ↔ τ̄).
    pub fn conj(&self) -> Self {
        Self {
            terms: self.terms.iter().map(|(m, v)| (*m, v.conj())).collect(),
        }
    }

    pub fn wedge(&self, o: &Self) -> Self {
        let mut terms: BTreeMap<u8, ParaComplex> = BTreeMap::new();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &o.terms {
                if ma & mb != 0 {
                    continue;
                }
                let e = terms.entry(ma | mb).or_default();
                *e = *e + (*ca * *cb).scale(merge_sign(*ma, *mb));
            }
        }
        Self { terms }
    }

    pub fn power(&self, k: usize) -> Self {
        (0..k).fold(Self::scalar(ParaComplex::ONE), |acc, _| acc.wedge(self))
    }
}

/// Both sides of e^{2nψ} ωⁿ/n! = (−1)^{n(n−1)/2} (k/2)ⁿ Ω∧Ω̄ as coefficients of
/// dx¹∧…∧dxⁿ∧dx̄¹∧…∧dx̄ⁿ. ωⁿ is expanded by explicit wedging and ψ comes from
/// its log-det definition, so the two sides are computed independently.
pub fn wedge_identity_sides(
    model: &CostModel,
    rho: f64,
    rho_bar: f64,
    x: &[f64],
    xbar: &[f64],
) -> Result<(ParaComplex, ParaComplex)> {
    let n = model.n_dims();
    let psi = conformal_factor(model, rho, rho_bar, x, xbar)?;
    let c = model.mixed(x, xbar);

    let mut omega = Form::zero();
    for i in 0..n {
        for s in 0..n {
            let term = Form::generator(i)
                .wedge(&Form::generator(n + s))
                .scale(ParaComplex::real(-0.5 * c[(i, s)]));
            omega = omega.add(&term);
        }
    }
    let full = ((1u16 << (2 * n)) - 1) as u8;
    let factorial: f64 = (1..=n).map(|v| v as f64).product();
    let lhs = omega
        .power(n)
        .coefficient(full)
        .scale((2.0 * n as f64 * psi).exp() / factorial);

    let dx = (0..n).fold(Form::scalar(ParaComplex::ONE), |f, i| {
        f.wedge(&Form::generator(i))
    });
    let dxb = (0..n).fold(Form::scalar(ParaComplex::ONE), |f, i| {
        f.wedge(&Form::generator(n + i))
    });
    let big_omega = dx
        .scale(ParaComplex::tau().scale(rho))
        .add(&dxb.scale(ParaComplex::tau_bar().scale(rho_bar)));
    let wedge = big_omega.wedge(&big_omega.conj()).coefficient(full);
    let sign = if (n * (n - 1) / 2).is_multiple_of(2) {
        1.0
    } else {
        -1.0
    };
    let rhs = ParaComplex::K.scale(0.5).powi(n as u32) * wedge.scale(sign);
    Ok((lhs, rhs))
}

/// Null-modulus of the difference of the two sides of the wedge identity.
pub fn wedge_identity_residual(
    model: &CostModel,
    rho: f64,
    rho_bar: f64,
    x: &[f64],
    xbar: &[f64],
) -> Result<f64> {
    let (l, r) = wedge_identity_sides(model, rho, rho_bar, x, xbar)?;
    Ok((l - r).null_modulus())
}
