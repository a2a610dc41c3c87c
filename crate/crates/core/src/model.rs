//! Nonlinearity `F(u) = Σ a_α D^α f_α(u)`, diffusion `σ(u)`, and the
//! Gaussian-sum norms of the diffusion.
//!
//! Scalar functions come from a closed catalog ([`ScalarFunction`]) whose
//! derivative bounds are certified analytically or by dense sampling, so
//! smoothness hypotheses are checked rather than assumed.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::spectral::{
    binomial, check_dim, derivative, forward_transform, GridField, MultiIndex, SpectralField, TrigPolynomial,
};

/// Derivative order up to which the analytic catalog members are certified.
pub const ANALYTIC_ORDER: usize = 12;

/// Number of vanishing end derivatives of the smoothstep used by the clamp.
const CLAMP_SMOOTHNESS: usize = 8;

/// Derivative order certified for [`ScalarFunction::PolynomialClamped`].
pub const CLAMP_ORDER: usize = CLAMP_SMOOTHNESS + 1;

// ---------------------------------------------------------------------------
// Polynomial helpers (ascending coefficients)
// ---------------------------------------------------------------------------

fn poly_eval(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

fn poly_deriv(c: &[f64]) -> Vec<f64> {
    c.iter().enumerate().skip(1).map(|(i, &a)| a * i as f64).collect()
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return vec![];
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// `sup_{x ∈ [lo, hi]} |p(x)|`, from dense sampling plus a Lipschitz slack
/// so the result is an upper bound.
fn poly_sup(c: &[f64], lo: f64, hi: f64) -> f64 {
    const SAMPLES: usize = 8001;
    let h = (hi - lo) / (SAMPLES - 1) as f64;
    let mut best: f64 = 0.0;
    for i in 0..SAMPLES {
        best = best.max(poly_eval(c, lo + h * i as f64).abs());
    }
    let d = poly_deriv(c);
    let r = lo.abs().max(hi.abs()).max(1.0);
    let lip: f64 = d.iter().enumerate().map(|(i, a)| a.abs() * r.powi(i as i32)).sum();
    best + 0.5 * h * lip
}

/// Derivative polynomials of `tanh`: `tanh^{(n)}(ξ) = P_n(tanh ξ)`.
fn tanh_polynomials() -> &'static [Vec<f64>] {
    static P: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    P.get_or_init(|| {
        let mut out = vec![vec![0.0, 1.0]];
        for n in 0..ANALYTIC_ORDER {
            out.push(poly_mul(&poly_deriv(&out[n]), &[1.0, 0.0, -1.0]));
        }
        out
    })
}

fn tanh_bounds() -> &'static [f64] {
    static B: OnceLock<Vec<f64>> = OnceLock::new();
    B.get_or_init(|| tanh_polynomials().iter().map(|p| poly_sup(p, -1.0, 1.0)).collect())
}

/// Smoothstep `S` on `[0, 1]` with `CLAMP_SMOOTHNESS` vanishing derivatives at
/// both ends, and its antiderivative.
fn smoothstep() -> &'static (Vec<f64>, Vec<f64>) {
    static S: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    S.get_or_init(|| {
        let n = CLAMP_SMOOTHNESS as u64;
        let mut s = vec![0.0; 2 * CLAMP_SMOOTHNESS + 2];
        for k in 0..=n {
            let c = binomial(n + k, k) as f64 * binomial(2 * n + 1, n - k) as f64;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            s[(n + 1 + k) as usize] = sign * c;
        }
        let mut integral = vec![0.0; s.len() + 1];
        for (i, a) in s.iter().enumerate() {
            integral[i + 1] = a / (i + 1) as f64;
        }
        (s, integral)
    })
}

// ---------------------------------------------------------------------------
// Scalar functions
// ---------------------------------------------------------------------------

/// Catalog of smooth scalar functions `ℝ → ℝ` with bounded derivatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ScalarFunction {
    /// `slope · ξ + intercept`.
    Affine { slope: f64, intercept: f64 },
    /// `amplitude · sin(frequency · ξ)`.
    Sine { amplitude: f64, frequency: f64 },
    /// `scale · tanh ξ`.
    TanhScaled { scale: f64 },
    /// `scale · atan ξ`.
    AtanScaled { scale: f64 },
    /// `p(c(ξ))` where `c` is the identity on `[-radius, radius]` and flattens
    /// smoothly to a constant over a transition of width `max(radius, 1)/2`.
    PolynomialClamped { coefficients: Vec<f64>, radius: f64 },
}

impl ScalarFunction {
    pub fn identity() -> Self {
        ScalarFunction::Affine { slope: 1.0, intercept: 0.0 }
    }

    pub fn constant(value: f64) -> Self {
        ScalarFunction::Affine { slope: 0.0, intercept: value }
    }

    pub fn linear(slope: f64) -> Self {
        ScalarFunction::Affine { slope, intercept: 0.0 }
    }

    pub fn tanh(scale: f64) -> Self {
        ScalarFunction::TanhScaled { scale }
    }

    pub fn atan(scale: f64) -> Self {
        ScalarFunction::AtanScaled { scale }
    }

    /// `ξ ↦ p(ξ)` on `[-radius, radius]`.
    pub fn clamped_polynomial(coefficients: impl Into<Vec<f64>>, radius: f64) -> Self {
        ScalarFunction::PolynomialClamped { coefficients: coefficients.into(), radius }
    }

    pub fn label(&self) -> String {
        match self {
            ScalarFunction::Affine { slope, intercept } => format!("affine({slope}, {intercept})"),
            ScalarFunction::Sine { amplitude, frequency } => format!("sine({amplitude}, {frequency})"),
            ScalarFunction::TanhScaled { scale } => format!("tanh-scaled({scale})"),
            ScalarFunction::AtanScaled { scale } => format!("atan-scaled({scale})"),
            ScalarFunction::PolynomialClamped { coefficients, radius } => {
                format!("polynomial-clamped({coefficients:?}, {radius})")
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: f64, what: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("{what} of {} must be finite", self.label())))
            }
        };
        match self {
            ScalarFunction::Affine { slope, intercept } => {
                finite(*slope, "slope")?;
                finite(*intercept, "intercept")
            }
            ScalarFunction::Sine { amplitude, frequency } => {
                finite(*amplitude, "amplitude")?;
                finite(*frequency, "frequency")
            }
            ScalarFunction::TanhScaled { scale } | ScalarFunction::AtanScaled { scale } => finite(*scale, "scale"),
            ScalarFunction::PolynomialClamped { coefficients, radius } => {
                for c in coefficients {
                    finite(*c, "coefficient")?;
                }
                if *radius > 0.0 && radius.is_finite() {
                    Ok(())
                } else {
                    Err(invalid(format!("clamp radius must be positive, got {radius}")))
                }
            }
        }
    }

    /// Highest derivative order covered by [`Self::derivative_bound`].
    pub fn certified_order(&self) -> usize {
        match self {
            ScalarFunction::PolynomialClamped { .. } => CLAMP_ORDER,
            _ => ANALYTIC_ORDER,
        }
    }

    pub fn require_order(&self, order: usize) -> Result<()> {
        let certified = self.certified_order();
        if order > certified {
            Err(Error::InsufficientSmoothness { function: self.label(), certified, required: order })
        } else {
            Ok(())
        }
    }

    /// Whether the function is constant in `ξ`.
    pub fn is_constant(&self) -> bool {
        match self {
            ScalarFunction::Affine { slope, .. } => *slope == 0.0,
            ScalarFunction::Sine { amplitude, frequency } => *amplitude == 0.0 || *frequency == 0.0,
            ScalarFunction::TanhScaled { scale } | ScalarFunction::AtanScaled { scale } => *scale == 0.0,
            ScalarFunction::PolynomialClamped { coefficients, .. } => coefficients.iter().skip(1).all(|&c| c == 0.0),
        }
    }

    pub fn value(&self, xi: f64) -> f64 {
        match self {
            ScalarFunction::Affine { slope, intercept } => slope * xi + intercept,
            ScalarFunction::Sine { amplitude, frequency } => amplitude * (frequency * xi).sin(),
            ScalarFunction::TanhScaled { scale } => scale * xi.tanh(),
            ScalarFunction::AtanScaled { scale } => scale * xi.atan(),
            ScalarFunction::PolynomialClamped { coefficients, radius } => {
                poly_eval(coefficients, clamp_value(xi, *radius))
            }
        }
    }

    /// `f^{(n)}(ξ)`.
    pub fn derivative(&self, n: usize, xi: f64) -> f64 {
        if n == 0 {
            return self.value(xi);
        }
        match self {
            ScalarFunction::Affine { slope, .. } => {
                if n == 1 {
                    *slope
                } else {
                    0.0
                }
            }
            ScalarFunction::Sine { amplitude, frequency } => {
                amplitude * frequency.powi(n as i32) * (frequency * xi + n as f64 * FRAC_PI_2).sin()
            }
            ScalarFunction::TanhScaled { scale } => {
                let polys = tanh_polynomials();
                if n < polys.len() {
                    scale * poly_eval(&polys[n], xi.tanh())
                } else {
                    f64::NAN
                }
            }
            ScalarFunction::AtanScaled { scale } => {
                // d^n/dξ^n atan ξ = (n-1)! (-1)^{n-1} sin(nθ) sin^n θ, θ = acot ξ
                let theta = 1f64.atan2(xi);
                let s = theta.sin();
                let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
                scale * factorial(n - 1) * sign * (n as f64 * theta).sin() * s.powi(n as i32)
            }
            ScalarFunction::PolynomialClamped { .. } => self.derivatives(xi, n)[n],
        }
    }

    /// `[f(ξ), f'(ξ), …, f^{(n)}(ξ)]`.
    pub fn derivatives(&self, xi: f64, n: usize) -> Vec<f64> {
        match self {
            ScalarFunction::PolynomialClamped { coefficients, radius } => {
                let inner = clamp_derivatives(xi, *radius, n);
                compose_polynomial(coefficients, &inner)
            }
            _ => (0..=n).map(|j| self.derivative(j, xi)).collect(),
        }
    }

    /// Certified `sup_ξ |f^{(j)}(ξ)|` for `1 ≤ j ≤ certified_order`.
    pub fn derivative_bound(&self, j: usize) -> Option<f64> {
        if j == 0 || j > self.certified_order() {
            return None;
        }
        Some(match self {
            ScalarFunction::Affine { slope, .. } => {
                if j == 1 {
                    slope.abs()
                } else {
                    0.0
                }
            }
            ScalarFunction::Sine { amplitude, frequency } => amplitude.abs() * frequency.abs().powi(j as i32),
            ScalarFunction::TanhScaled { scale } => {
                // tanh' = 1 - tanh² peaks at exactly 1.
                if j == 1 {
                    scale.abs()
                } else {
                    scale.abs() * tanh_bounds()[j]
                }
            }
            ScalarFunction::AtanScaled { scale } => scale.abs() * factorial(j - 1),
            ScalarFunction::PolynomialClamped { radius, .. } => {
                // Derivatives vanish outside the transition region.
                let outer = clamp_outer(*radius);
                let samples = 20001;
                let h = 2.0 * outer / (samples - 1) as f64;
                let mut best: f64 = 0.0;
                for i in 0..samples {
                    let d = self.derivatives(-outer + h * i as f64, j);
                    best = best.max(d[j].abs());
                }
                best * 1.01
            }
        })
    }

    /// `sup_ξ f(ξ)² / (1 + ξ²)`.
    pub fn growth_bound(&self) -> f64 {
        match self {
            // Cauchy-Schwarz: (aξ + b)² ≤ (a² + b²)(ξ² + 1), with equality at ξ = a/b.
            ScalarFunction::Affine { slope, intercept } => slope * slope + intercept * intercept,
            _ => {
                let ratio = |xi: f64| self.value(xi).powi(2) / (1.0 + xi * xi);
                // Sample on ξ = sinh(s) to cover [-1e6, 1e6], then refine the
                // best samples by golden-section search.
                let n = 6001;
                let s_max = 1e6f64.asinh();
                let h = 2.0 * s_max / (n - 1) as f64;
                let mut vals: Vec<(f64, f64)> = (0..n)
                    .map(|i| {
                        let s = -s_max + h * i as f64;
                        (s, ratio(s.sinh()))
                    })
                    .collect();
                vals.sort_by(|a, b| b.1.total_cmp(&a.1));
                vals.iter().take(8).map(|&(s, _)| golden_max(|s| ratio(s.sinh()), s - h, s + h)).fold(0.0, f64::max)
            }
        }
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    for _ in 0..60 {
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    f(0.5 * (a + b)).max(f(a)).max(f(b))
}

fn clamp_width(radius: f64) -> f64 {
    radius.max(1.0) / 2.0
}

fn clamp_outer(radius: f64) -> f64 {
    radius + clamp_width(radius)
}

fn clamp_value(xi: f64, radius: f64) -> f64 {
    if xi.abs() <= radius {
        return xi;
    }
    let w = clamp_width(radius);
    let tau = ((xi.abs() - radius) / w).min(1.0);
    let (_, integral) = smoothstep();
    xi.signum() * (radius + w * (tau - poly_eval(integral, tau)))
}

/// `[c(ξ), c'(ξ), …, c^{(n)}(ξ)]` for the smooth clamp.
fn clamp_derivatives(xi: f64, radius: f64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    out[0] = clamp_value(xi, radius);
    if xi.abs() <= radius {
        if n >= 1 {
            out[1] = 1.0;
        }
        return out;
    }
    let w = clamp_width(radius);
    let tau = (xi.abs() - radius) / w;
    if tau >= 1.0 {
        return out;
    }
    let (s, _) = smoothstep();
    let mut ds = s.clone();
    for j in 1..=n {
        // c^{(j)} = -S^{(j-1)}(τ) / w^{j-1} on the positive side; odd
        // symmetry flips the sign of even-order derivatives.
        let v = if j == 1 {
            1.0 - poly_eval(&ds, tau)
        } else {
            ds = poly_deriv(&ds);
            -poly_eval(&ds, tau) / w.powi(j as i32 - 1)
        };
        out[j] = if xi < 0.0 && j % 2 == 0 { -v } else { v };
    }
    out
}

/// Derivatives of `p ∘ c` from the derivatives of `c`, by truncated Taylor
/// arithmetic.
fn compose_polynomial(p: &[f64], inner: &[f64]) -> Vec<f64> {
    let n = inner.len() - 1;
    let mut fact = vec![1.0; n + 1];
    for j in 1..=n {
        fact[j] = fact[j - 1] * j as f64;
    }
    // Taylor coefficients of c(ξ + h) - c(ξ) in h.
    let mut dc: Vec<f64> = inner.iter().zip(&fact).map(|(d, f)| d / f).collect();
    let c0 = dc[0];
    dc[0] = 0.0;
    // Taylor coefficients of p around c0.
    let mut shifted = p.to_vec();
    let mut q = vec![0.0; p.len()];
    for (i, slot) in q.iter_mut().enumerate() {
        *slot = poly_eval(&shifted, c0) / fact_f(i);
        shifted = poly_deriv(&shifted);
    }
    // Horner in the series ring.
    let mut acc = vec![0.0; n + 1];
    for &a in q.iter().rev() {
        let mut next = vec![0.0; n + 1];
        for i in 0..=n {
            if acc[i] == 0.0 {
                continue;
            }
            for j in 1..=n - i {
                next[i + j] += acc[i] * dc[j];
            }
        }
        next[0] += a;
        acc = next;
    }
    acc.iter().zip(&fact).map(|(a, f)| a * f).collect()
}

fn fact_f(n: usize) -> f64 {
    factorial(n)
}

// ---------------------------------------------------------------------------
// Separable functions of (x, ξ)
// ---------------------------------------------------------------------------

/// `σ(x, ξ) = g(x) · h(ξ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparableFunction {
    #[serde(default = "unit_polynomial")]
    pub spatial: TrigPolynomial,
    pub function: ScalarFunction,
}

fn unit_polynomial() -> TrigPolynomial {
    TrigPolynomial::constant(1.0)
}

impl SeparableFunction {
    pub fn new(spatial: TrigPolynomial, function: ScalarFunction) -> Self {
        SeparableFunction { spatial, function }
    }

    /// `σ(x, ξ) = h(ξ)`.
    pub fn uniform(function: ScalarFunction) -> Self {
        SeparableFunction { spatial: unit_polynomial(), function }
    }

    /// `σ(x, ξ) = value`.
    pub fn constant(value: f64) -> Self {
        Self::uniform(ScalarFunction::constant(value))
    }

    pub fn value(&self, x: &[f64], xi: f64) -> f64 {
        self.spatial.value(x) * self.function.value(xi)
    }

    /// Values of `g` on a grid.
    pub fn spatial_grid(&self, dim: usize, points: usize) -> Vec<f64> {
        GridField::from_fn(dim, points, |x| self.spatial.value(x)).into_values()
    }

    /// `g(x) h(u(x))` sampled on the quadrature grid and transformed.
    pub fn compose(&self, u: &SpectralField) -> Result<SpectralField> {
        self.spatial.check_dim(u.dim())?;
        let grid = u.quadrature_grid();
        let g = self.spatial_grid(u.dim(), grid.points());
        let values = grid.values().iter().zip(&g).map(|(&v, &gx)| gx * self.function.value(v)).collect();
        forward_transform(&GridField::new(u.dim(), grid.points(), values)?, u.cutoff())
    }
}

// ---------------------------------------------------------------------------
// Nonlinearity and diffusion
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonlinearTerm {
    pub coefficient: f64,
    pub alpha: MultiIndex,
    pub function: ScalarFunction,
}

/// `F(u) = Σ a_α D^α f_α(u)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NonlinearitySpec {
    #[serde(default)]
    pub terms: Vec<NonlinearTerm>,
}

impl NonlinearitySpec {
    pub fn new(terms: Vec<NonlinearTerm>) -> Self {
        NonlinearitySpec { terms }
    }

    pub fn single(coefficient: f64, alpha: MultiIndex, function: ScalarFunction) -> Self {
        Self::new(vec![NonlinearTerm { coefficient, alpha, function }])
    }

    /// Number of terms with non-zero coefficient.
    pub fn term_count(&self) -> usize {
        self.terms.iter().filter(|t| t.coefficient != 0.0).count()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.coefficient == 0.0)
    }

    /// Checks `|α| ≤ 2l - 1` and the certified order of each function
    /// against `max(smoothness, 2l - 1)`.
    pub fn validate(&self, dim: usize, half_order: u32, smoothness: usize) -> Result<()> {
        let max_alpha = 2 * half_order as usize - 1;
        for t in &self.terms {
            check_dim(dim, t.alpha.dim())?;
            if t.alpha.order() > max_alpha {
                return Err(invalid(format!("term derivative order {} exceeds {max_alpha}", t.alpha.order())));
            }
            t.function.validate()?;
            t.function.require_order(smoothness.max(max_alpha))?;
        }
        Ok(())
    }

    /// Evaluates `F(u)` pseudo-spectrally on the oversampled grid.
    pub fn evaluate(&self, u: &SpectralField) -> Result<SpectralField> {
        self.evaluate_on_grid(&u.quadrature_grid(), u.cutoff())
    }

    /// As [`Self::evaluate`], with the grid values of `u` already available.
    pub fn evaluate_on_grid(&self, grid: &GridField, cutoff: usize) -> Result<SpectralField> {
        let mut out = SpectralField::zeros(grid.dim(), cutoff);
        for t in &self.terms {
            if t.coefficient == 0.0 {
                continue;
            }
            check_dim(grid.dim(), t.alpha.dim())?;
            let f = forward_transform(&grid.map(|v| t.function.value(v)), cutoff)?;
            out.axpy(t.coefficient, &derivative(&f, &t.alpha)?)?;
        }
        Ok(out)
    }
}

/// `F(u)`.
pub fn eval_nonlinearity(spec: &NonlinearitySpec, u: &SpectralField) -> Result<SpectralField> {
    spec.evaluate(u)
}

/// `σ(u) h = Σ_i σ_i(·, u) ⟨e_i, h⟩` with `d` separable components.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSpec {
    #[serde(default)]
    pub components: Vec<SeparableFunction>,
}

impl DiffusionSpec {
    pub fn new(components: Vec<SeparableFunction>) -> Self {
        DiffusionSpec { components }
    }

    /// `d = 1`, `σ_1 ≡ value`.
    pub fn constant(value: f64) -> Self {
        Self::new(vec![SeparableFunction::constant(value)])
    }

    /// Noise dimension `d`.
    pub fn noise_dim(&self) -> usize {
        self.components.len()
    }

    /// Whether every `σ_i` is independent of the solution.
    pub fn is_additive(&self) -> bool {
        self.components.iter().all(|c| c.function.is_constant())
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|c| {
            c.spatial.sup_bound() == 0.0
                || matches!(c.function, ScalarFunction::Affine { slope, intercept } if slope == 0.0 && intercept == 0.0)
        })
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        for c in &self.components {
            c.spatial.check_dim(dim)?;
            c.function.validate()?;
            c.function.require_order(1)?;
        }
        Ok(())
    }

    /// Exact fields `σ_i(·)` of an additive diffusion, one per component.
    pub fn additive_fields(&self, dim: usize, cutoff: usize) -> Result<Vec<SpectralField>> {
        if !self.is_additive() {
            return Err(Error::Unsupported("diffusion depends on the solution".into()));
        }
        self.components.iter().map(|c| Ok(c.spatial.to_field(dim, cutoff)?.scale(c.function.value(0.0)))).collect()
    }

    /// `σ_i(·, u(·))` as fields, one per noise component.
    pub fn component_fields(&self, u: &SpectralField) -> Result<Vec<SpectralField>> {
        self.components.iter().map(|c| c.compose(u)).collect()
    }

    /// Grid values of every `σ_i(·, u(·))` on the quadrature grid.
    pub fn component_grids(&self, u: &SpectralField) -> Result<Vec<Vec<f64>>> {
        let grid = u.quadrature_grid();
        self.component_grids_on(&grid)
    }

    pub fn component_grids_on(&self, grid: &GridField) -> Result<Vec<Vec<f64>>> {
        self.components
            .iter()
            .map(|c| {
                c.spatial.check_dim(grid.dim())?;
                let g = c.spatial_grid(grid.dim(), grid.points());
                Ok(grid.values().iter().zip(&g).map(|(&v, &gx)| gx * c.function.value(v)).collect())
            })
            .collect()
    }
}

/// `Σ_i σ_i(·, u) Δw_i`.
pub fn eval_diffusion_increment(spec: &DiffusionSpec, u: &SpectralField, dw: &[f64]) -> Result<SpectralField> {
    let grid = u.quadrature_grid();
    diffusion_increment_on_grid(spec, &grid, u.cutoff(), dw)
}

pub(crate) fn diffusion_increment_on_grid(
    spec: &DiffusionSpec,
    grid: &GridField,
    cutoff: usize,
    dw: &[f64],
) -> Result<SpectralField> {
    if dw.len() != spec.noise_dim() {
        return Err(Error::SizeMismatch(format!(
            "{} noise increments for {} diffusion components",
            dw.len(),
            spec.noise_dim()
        )));
    }
    let mut values = vec![0.0; grid.len()];
    for (c, &w) in spec.components.iter().zip(dw) {
        if w == 0.0 {
            continue;
        }
        c.spatial.check_dim(grid.dim())?;
        let g = c.spatial_grid(grid.dim(), grid.points());
        for ((acc, &v), &gx) in values.iter_mut().zip(grid.values()).zip(&g) {
            *acc += w * gx * c.function.value(v);
        }
    }
    forward_transform(&GridField::new(grid.dim(), grid.points(), values)?, cutoff)
}

// ---------------------------------------------------------------------------
// Gaussian moments and γ-norms
// ---------------------------------------------------------------------------

/// `(E|Z|^p)^{1/p}` for a standard normal `Z`.
pub fn gaussian_moment_constant(p: f64) -> Result<f64> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(invalid(format!("moment exponent must satisfy p >= 1, got {p}")));
    }
    if p.fract() == 0.0 && (p as u64).is_multiple_of(2) && p <= 300.0 {
        // E Z^{2n} = (2n - 1)!!
        let n = p as u64;
        let log_df: f64 = (1..n).step_by(2).map(|k| (k as f64).ln()).sum();
        return Ok((log_df / p).exp());
    }
    Ok((half_line_gaussian_moment(p).ln() / p).exp())
}

/// `E|Z|^p = 2 ∫_0^∞ z^p φ(z) dz` by exp-sinh quadrature.
fn half_line_gaussian_moment(p: f64) -> f64 {
    let h = 1.0 / 64.0;
    let log_norm = -0.5 * (2.0 * PI).ln() + 2f64.ln();
    let mut sum = 0.0;
    for k in -320i32..=320 {
        let t = k as f64 * h;
        let log_z = FRAC_PI_2 * t.sinh();
        let z = log_z.exp();
        // z = exp(π/2 sinh t), dz = z π/2 cosh t dt
        let log_term = (p + 1.0) * log_z - 0.5 * z * z + (FRAC_PI_2 * t.cosh()).ln() + log_norm;
        if log_term > -745.0 {
            sum += log_term.exp();
        }
    }
    sum * h
}

/// `C_p (∫ (Σ_i σ_i(y, u(y))²)^{p/2} dy)^{1/p}`, the exact `p`-th moment
/// norm of `Σ ξ_i σ_i`.
pub fn gamma_norm_closed(spec: &DiffusionSpec, u: &SpectralField, p: f64) -> Result<f64> {
    if !(p >= 2.0) {
        return Err(invalid(format!("γ-norm exponent must satisfy p >= 2, got {p}")));
    }
    let grids = spec.component_grids(u)?;
    let n = u.quadrature_grid().len();
    let mut acc = 0.0;
    for i in 0..n {
        let s: f64 = grids.iter().map(|g| g[i] * g[i]).sum();
        acc += s.powf(p / 2.0);
    }
    Ok(gaussian_moment_constant(p)? * (acc / n as f64).powf(1.0 / p))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// Monte Carlo estimate of `sqrt(E‖Σ_i ξ_i σ_i(·, u)‖²_{L^p})`.
///
/// Sample `j` draws its Gaussian vector from the stream keyed by
/// `(seed, j)`; the standard error comes from the delta method.
pub fn gamma_norm_mc(spec: &DiffusionSpec, u: &SpectralField, p: f64, samples: usize, seed: u64) -> Result<McEstimate> {
    if samples < 100 {
        return Err(invalid(format!("γ-norm Monte Carlo needs at least 100 samples, got {samples}")));
    }
    if !(p >= 2.0) {
        return Err(invalid(format!("γ-norm exponent must satisfy p >= 2, got {p}")));
    }
    let grids = spec.component_grids(u)?;
    let n = u.quadrature_grid().len();
    let d = grids.len();
    let squares: Vec<f64> = (0..samples as u64)
        .into_par_iter()
        .map(|j| {
            let xi = rng::normals(&mut rng::stream(seed, &[j]), d);
            let mut acc = 0.0;
            for i in 0..n {
                let v: f64 = grids.iter().zip(&xi).map(|(g, x)| g[i] * x).sum();
                acc += v.abs().powf(p);
            }
            (acc / n as f64).powf(2.0 / p)
        })
        .collect();
    let m = samples as f64;
    let mean = squares.iter().sum::<f64>() / m;
    let var = squares.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (m - 1.0);
    let estimate = mean.sqrt();
    let std_error = if estimate > 0.0 { (var / m).sqrt() / (2.0 * estimate) } else { 0.0 };
    Ok(McEstimate { estimate, std_error })
}

// ---------------------------------------------------------------------------
// Certificates
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// `sup Σ σ_i² / (1 + ξ²)` (or `max_α sup f_α² / (1 + ξ²)`).
    pub c_growth: f64,
    /// Largest certified first-derivative bound among the components.
    pub c_lip: f64,
}

pub enum Certifiable<'a> {
    Diffusion(&'a DiffusionSpec),
    Nonlinearity(&'a NonlinearitySpec),
}

fn first_bound(f: &ScalarFunction) -> Result<f64> {
    f.derivative_bound(1).ok_or_else(|| Error::InsufficientSmoothness {
        function: f.label(),
        certified: f.certified_order(),
        required: 1,
    })
}

/// Growth and Lipschitz certificates.
///
/// For a diffusion the growth constant is `Σ_i (sup|g_i|)² sup_ξ h_i²/(1+ξ²)`,
/// an upper bound for the pointwise supremum of `Σ σ_i² / (1 + ξ²)`.
pub fn growth_and_lipschitz_certify(spec: Certifiable<'_>) -> Result<Certificate> {
    match spec {
        Certifiable::Diffusion(d) => {
            let mut c_growth = 0.0;
            let mut c_lip: f64 = 0.0;
            for c in &d.components {
                let g = c.spatial.sup_bound();
                c_growth += g * g * c.function.growth_bound();
                c_lip = c_lip.max(g * first_bound(&c.function)?);
            }
            Ok(Certificate { c_growth, c_lip })
        }
        Certifiable::Nonlinearity(n) => {
            let mut c_growth: f64 = 0.0;
            let mut c_lip: f64 = 0.0;
            for t in &n.terms {
                c_growth = c_growth.max(t.function.growth_bound());
                c_lip = c_lip.max(first_bound(&t.function)?);
            }
            Ok(Certificate { c_growth, c_lip })
        }
    }
}

/// `sqrt(Σ_i (sup|g_i| · sup|h_i'|)²)`, the Lipschitz constant of
/// `ξ ↦ (σ_i(x, ξ))_i` in the Euclidean norm.
pub fn diffusion_euclidean_lipschitz(spec: &DiffusionSpec) -> Result<f64> {
    let mut acc = 0.0;
    for c in &spec.components {
        let l = c.spatial.sup_bound() * first_bound(&c.function)?;
        acc += l * l;
    }
    Ok(acc.sqrt())
}
