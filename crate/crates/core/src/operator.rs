//! The strongly elliptic operator `-A`, its semigroup and fractional powers.
//!
//! Two realizations are supported:
//!
//! * [`OperatorKind::Diagonal`]: the Fourier multiplier
//!   `λ(k) = (ν (2π|k|)² + μ)^l`, for which every spectral function is exact;
//! * [`OperatorKind::DivergenceForm`]: `-A u = -Σ ∂_i (A_ij ∂_j u) + c u` with
//!   trigonometric-polynomial coefficients, realized as a dense Hermitian
//!   Galerkin matrix on the retained modes and diagonalized once.
//!
//! Spectral functions `φ(-A)` are applied through a [`SpectralMultiplier`]
//! obtained from a [`Discretization`].

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::spectral::{
    check_dim, derivative, for_each_mode, lp_norm, wavenumber_squares, wavevectors, GridField, MultiIndex,
    SpectralField, TrigPolynomial, TWO_PI,
};

/// Configuration of `-A`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipticOperator {
    /// Half the differential order, `l` in `2l`.
    #[serde(default = "one")]
    pub half_order: u32,
    #[serde(flatten)]
    pub kind: OperatorKind,
}

fn one() -> u32 {
    1
}

fn unit() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OperatorKind {
    /// `λ(k) = (diffusivity · (2π|k|)² + shift)^l`.
    Diagonal {
        #[serde(default = "unit")]
        diffusivity: f64,
        #[serde(default = "unit")]
        shift: f64,
    },
    /// `-Σ ∂_i (A_ij ∂_j u) + shift · u`, second order only.
    DivergenceForm {
        /// Row-major `N × N` coefficient matrix; must be symmetric.
        coefficients: Vec<Vec<TrigPolynomial>>,
        shift: f64,
    },
}

impl Default for EllipticOperator {
    fn default() -> Self {
        Self::diagonal(1, 1.0, 1.0)
    }
}

impl EllipticOperator {
    pub fn diagonal(half_order: u32, diffusivity: f64, shift: f64) -> Self {
        EllipticOperator { half_order, kind: OperatorKind::Diagonal { diffusivity, shift } }
    }

    /// The operator with `λ(k) = shift` for every `k`.
    pub fn constant(shift: f64) -> Self {
        Self::diagonal(1, 0.0, shift)
    }

    pub fn divergence_form(coefficients: Vec<Vec<TrigPolynomial>>, shift: f64) -> Self {
        EllipticOperator { half_order: 1, kind: OperatorKind::DivergenceForm { coefficients, shift } }
    }

    /// `l`.
    pub fn half_order(&self) -> u32 {
        self.half_order
    }

    /// `2l`.
    pub fn order(&self) -> u32 {
        2 * self.half_order
    }

    /// `(2l - 1) / (2l)`, the fractional order paired with the nonlinearity.
    pub fn default_delta(&self) -> f64 {
        (2.0 * self.half_order as f64 - 1.0) / (2.0 * self.half_order as f64)
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self.kind, OperatorKind::Diagonal { .. })
    }

    /// `λ(k)` for a diagonal operator.
    pub fn symbol(&self, k: &[i64]) -> Option<f64> {
        let k2: i64 = k.iter().map(|v| v * v).sum();
        self.radial_symbol(k2 as f64)
    }

    /// `λ` as a function of `|k|²`.
    pub fn radial_symbol(&self, k2: f64) -> Option<f64> {
        match self.kind {
            OperatorKind::Diagonal { diffusivity, shift } => {
                Some((diffusivity * TWO_PI * TWO_PI * k2 + shift).powi(self.half_order as i32))
            }
            OperatorKind::DivergenceForm { .. } => None,
        }
    }

    /// Checks positivity and ellipticity in dimension `dim`.
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.half_order == 0 {
            return Err(invalid("operator order must be at least 2"));
        }
        match &self.kind {
            OperatorKind::Diagonal { diffusivity, shift } => {
                if !(*shift > 0.0 && shift.is_finite()) {
                    return Err(invalid(format!("diagonal shift must be positive, got {shift}")));
                }
                if !(*diffusivity >= 0.0 && diffusivity.is_finite()) {
                    return Err(invalid(format!("diffusivity must be non-negative, got {diffusivity}")));
                }
            }
            OperatorKind::DivergenceForm { coefficients, shift } => {
                if self.half_order != 1 {
                    return Err(Error::Unsupported("divergence-form operators are second order".into()));
                }
                if !(*shift > 0.0) {
                    return Err(invalid(format!("divergence-form shift must be positive, got {shift}")));
                }
                check_dim(dim, coefficients.len())?;
                for (i, row) in coefficients.iter().enumerate() {
                    check_dim(dim, row.len())?;
                    for (j, a) in row.iter().enumerate() {
                        a.check_dim(dim)?;
                        if *a != coefficients[j][i] {
                            return Err(invalid(format!("coefficient matrix not symmetric at ({i},{j})")));
                        }
                    }
                }
                let alpha = self.ellipticity_constant(dim, 16)?;
                if alpha <= 0.0 {
                    return Err(invalid(format!("coefficients fail uniform ellipticity (minimum eigenvalue {alpha})")));
                }
            }
        }
        Ok(())
    }

    /// Smallest eigenvalue of `A_ij(x)` over a sampling grid with `points`
    /// nodes per axis. For diagonal operators this is the diffusivity.
    pub fn ellipticity_constant(&self, dim: usize, points: usize) -> Result<f64> {
        match &self.kind {
            OperatorKind::Diagonal { diffusivity, .. } => Ok(*diffusivity),
            OperatorKind::DivergenceForm { coefficients, .. } => {
                check_dim(dim, coefficients.len())?;
                let probe = GridField::from_fn(dim, points, |_| 0.0);
                let mut min = f64::INFINITY;
                for idx in 0..probe.len() {
                    let x = probe.coordinates(idx);
                    let m = DMatrix::from_fn(dim, dim, |i, j| coefficients[i][j].value(&x));
                    let e = m.symmetric_eigenvalues().min();
                    min = min.min(e);
                }
                Ok(min)
            }
        }
    }

    /// Realizes the operator on the modes `{-K..K}^N`.
    pub fn discretize(&self, dim: usize, cutoff: usize) -> Result<Discretization> {
        self.validate(dim)?;
        let repr = match &self.kind {
            OperatorKind::Diagonal { .. } => Repr::Diagonal(
                wavenumber_squares(dim, cutoff).into_iter().map(|k2| self.radial_symbol(k2).unwrap()).collect(),
            ),
            OperatorKind::DivergenceForm { .. } => {
                let g = galerkin_matrix(self, dim, cutoff)?;
                // Eigenpairs of the positive operator -A.
                let eig = SymmetricEigen::new(-g.matrix);
                let eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
                if let Some(bad) = eigenvalues.iter().find(|&&e| e <= 0.0) {
                    return Err(invalid(format!("Galerkin matrix has non-negative eigenvalue {}", -bad)));
                }
                Repr::Dense { eigenvalues, eigenvectors: eig.eigenvectors }
            }
        };
        Ok(Discretization { dim, cutoff, repr })
    }
}

/// Dense matrix of the generator `A` on the retained Fourier modes.
///
/// Row and column `i` correspond to `modes[i]`, in field storage order.
/// The matrix is Hermitian and negative definite.
#[derive(Clone, Debug)]
pub struct GalerkinMatrix {
    pub modes: Vec<Vec<i64>>,
    pub matrix: DMatrix<Complex64>,
}

#[derive(Serialize)]
struct GalerkinRecord<'a> {
    modes: &'a [Vec<i64>],
    real: Vec<Vec<f64>>,
    imag: Vec<Vec<f64>>,
}

impl GalerkinMatrix {
    /// `max |G_ij - conj(G_ji)|`.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.matrix.nrows();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.matrix.clone().symmetric_eigenvalues().iter().copied().collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let n = self.matrix.nrows();
        let rows =
            |f: fn(&Complex64) -> f64| (0..n).map(|i| (0..n).map(|j| f(&self.matrix[(i, j)])).collect()).collect();
        Ok(serde_json::to_string(&GalerkinRecord { modes: &self.modes, real: rows(|c| c.re), imag: rows(|c| c.im) })?)
    }
}

/// Builds the Galerkin matrix of `A`. Diagonal operators give their symbol
/// on the diagonal.
pub fn galerkin_matrix(op: &EllipticOperator, dim: usize, cutoff: usize) -> Result<GalerkinMatrix> {
    let modes = wavevectors(dim, cutoff);
    let n = modes.len();
    let matrix = match &op.kind {
        OperatorKind::Diagonal { .. } => DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                Complex64::new(-op.symbol(&modes[i]).unwrap(), 0.0)
            } else {
                Complex64::default()
            }
        }),
        OperatorKind::DivergenceForm { coefficients, shift } => {
            check_dim(dim, coefficients.len())?;
            let mut m = DMatrix::from_element(n, n, Complex64::default());
            let mut diff = vec![0i64; dim];
            for (r, k) in modes.iter().enumerate() {
                for (c, l) in modes.iter().enumerate() {
                    for d in 0..dim {
                        diff[d] = k[d] - l[d];
                    }
                    let mut acc = Complex64::default();
                    for i in 0..dim {
                        for j in 0..dim {
                            let w = (k[i] * l[j]) as f64;
                            if w != 0.0 {
                                acc += coefficients[i][j].fourier_coefficient(&diff) * w;
                            }
                        }
                    }
                    m[(r, c)] = -acc * (TWO_PI * TWO_PI);
                }
                m[(r, r)] -= *shift;
            }
            // Exact Hermitian symmetry.
            let mt = m.adjoint();
            (m + mt) * Complex64::new(0.5, 0.0)
        }
    };
    Ok(GalerkinMatrix { modes, matrix })
}

#[derive(Clone, Debug)]
enum Repr {
    Diagonal(Vec<f64>),
    Dense { eigenvalues: Vec<f64>, eigenvectors: DMatrix<Complex64> },
}

/// The operator `-A` realized on a fixed set of modes, ready to apply
/// spectral functions.
#[derive(Clone, Debug)]
pub struct Discretization {
    dim: usize,
    cutoff: usize,
    repr: Repr,
}

/// A linear map `φ(-A)` on coefficient vectors.
#[derive(Clone, Debug)]
pub enum SpectralMultiplier {
    Diagonal(Vec<f64>),
    Dense(DMatrix<Complex64>),
}

impl SpectralMultiplier {
    pub fn apply(&self, u: &SpectralField) -> Result<SpectralField> {
        match self {
            SpectralMultiplier::Diagonal(w) => {
                if w.len() != u.len() {
                    return Err(Error::SizeMismatch(format!(
                        "multiplier of length {} applied to {} coefficients",
                        w.len(),
                        u.len()
                    )));
                }
                let mut out = u.clone();
                for (c, &f) in out.coefficients_mut().iter_mut().zip(w) {
                    *c *= f;
                }
                Ok(out)
            }
            SpectralMultiplier::Dense(m) => {
                if m.ncols() != u.len() {
                    return Err(Error::SizeMismatch(format!(
                        "{}x{} multiplier applied to {} coefficients",
                        m.nrows(),
                        m.ncols(),
                        u.len()
                    )));
                }
                let v = m * DVector::from_column_slice(u.coefficients());
                SpectralField::from_coefficients(u.dim(), u.cutoff(), v.iter().copied().collect())
            }
        }
    }

    /// `self += factor · φ(-A) u` without materializing the intermediate.
    pub fn apply_add(&self, u: &SpectralField, factor: f64, acc: &mut SpectralField) -> Result<()> {
        match self {
            SpectralMultiplier::Diagonal(w) => {
                u.check_compatible(acc)?;
                for ((a, c), &f) in acc.coefficients_mut().iter_mut().zip(u.coefficients()).zip(w) {
                    *a += c * (f * factor);
                }
                Ok(())
            }
            SpectralMultiplier::Dense(_) => acc.axpy(factor, &self.apply(u)?),
        }
    }
}

impl Discretization {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    /// Eigenvalues of `-A` on the retained modes (field order for diagonal
    /// operators, ascending for Galerkin realizations).
    pub fn eigenvalues(&self) -> &[f64] {
        match &self.repr {
            Repr::Diagonal(l) => l,
            Repr::Dense { eigenvalues, .. } => eigenvalues,
        }
    }

    pub fn multiplier(&self, f: impl Fn(f64) -> f64) -> SpectralMultiplier {
        match &self.repr {
            Repr::Diagonal(l) => SpectralMultiplier::Diagonal(l.iter().map(|&x| f(x)).collect()),
            Repr::Dense { eigenvalues, eigenvectors } => {
                let mut scaled = eigenvectors.clone();
                for (j, &lam) in eigenvalues.iter().enumerate() {
                    let fj = f(lam);
                    scaled.column_mut(j).iter_mut().for_each(|c| *c *= fj);
                }
                SpectralMultiplier::Dense(scaled * eigenvectors.adjoint())
            }
        }
    }

    fn check_field(&self, u: &SpectralField) -> Result<()> {
        check_dim(self.dim, u.dim())?;
        if u.cutoff() != self.cutoff {
            return Err(Error::SizeMismatch(format!(
                "operator realized at cutoff {}, field has cutoff {}",
                self.cutoff,
                u.cutoff()
            )));
        }
        Ok(())
    }

    pub fn apply_function(&self, u: &SpectralField, f: impl Fn(f64) -> f64) -> Result<SpectralField> {
        self.check_field(u)?;
        self.multiplier(f).apply(u)
    }

    /// `S(t) u = exp(tA) u`.
    pub fn semigroup(&self, t: f64, u: &SpectralField) -> Result<SpectralField> {
        check_time(t)?;
        if t == 0.0 {
            self.check_field(u)?;
            return Ok(u.clone());
        }
        self.apply_function(u, |l| (-t * l).exp())
    }

    /// `(-A)^δ u`.
    pub fn power(&self, delta: f64, u: &SpectralField) -> Result<SpectralField> {
        if delta == 0.0 {
            self.check_field(u)?;
            return Ok(u.clone());
        }
        self.apply_function(u, |l| l.powf(delta))
    }

    pub fn semigroup_multiplier(&self, t: f64) -> SpectralMultiplier {
        self.multiplier(|l| (-t * l).exp())
    }

    /// `(-A)^{-1} (I - S(Δt))`, which integrates a frozen forcing exactly
    /// over one step.
    pub fn phi1_multiplier(&self, dt: f64) -> SpectralMultiplier {
        self.multiplier(|l| phi1(dt, l))
    }
}

/// `(1 - e^{-Δt λ}) / λ`, evaluated stably for small `Δt λ`.
pub fn phi1(dt: f64, lambda: f64) -> f64 {
    let x = dt * lambda;
    if x.abs() < 1e-8 {
        dt * (1.0 - 0.5 * x)
    } else {
        -(-x).exp_m1() / lambda
    }
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("semigroup time must be non-negative, got {t}")))
    }
}

/// `S(t) u`.
pub fn apply_semigroup(op: &EllipticOperator, t: f64, u: &SpectralField) -> Result<SpectralField> {
    check_time(t)?;
    op.discretize(u.dim(), u.cutoff())?.semigroup(t, u)
}

/// `(-A)^δ u`; negative `δ` gives the bounded inverse powers.
pub fn apply_fractional_power(op: &EllipticOperator, delta: f64, u: &SpectralField) -> Result<SpectralField> {
    if !delta.is_finite() {
        return Err(invalid("fractional order must be finite"));
    }
    op.discretize(u.dim(), u.cutoff())?.power(delta, u)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingBound {
    /// `sup_k λ(k)^δ e^{-tλ(k)}` over all wavevectors in `Z^N`.
    pub measured: f64,
    /// `(δ/e)^δ t^{-δ}`.
    pub bound: f64,
}

/// Whether `n` is a sum of `dim` integer squares.
fn is_sum_of_squares(n: u64, dim: usize) -> bool {
    match dim {
        0 => n == 0,
        1 => {
            let r = (n as f64).sqrt().round() as u64;
            r * r == n
        }
        d if d >= 4 => true,
        d => {
            let mut a = 0u64;
            while a * a <= n {
                if is_sum_of_squares(n - a * a, d - 1) {
                    return true;
                }
                a += 1;
            }
            false
        }
    }
}

/// Exact `L²` operator norm of `(-A)^δ S(t)` against the analytic bound.
///
/// The supremum runs over every wavevector of `Z^N`, not just a truncation:
/// `λ ↦ λ^δ e^{-tλ}` is unimodal with peak at `λ = δ/t`, so only the
/// attainable values of `|k|²` adjacent to the peak need checking.
pub fn smoothing_bound_check(op: &EllipticOperator, delta: f64, t: f64, dim: usize) -> Result<SmoothingBound> {
    if !(t > 0.0) {
        return Err(invalid(format!("smoothing time must be positive, got {t}")));
    }
    if !(delta >= 0.0) {
        return Err(invalid(format!("smoothing order must be non-negative, got {delta}")));
    }
    let OperatorKind::Diagonal { diffusivity, shift } = op.kind else {
        return Err(Error::Unsupported("smoothing bound check requires a diagonal operator".into()));
    };
    op.validate(dim)?;
    let g = |k2: u64| {
        let l = op.radial_symbol(k2 as f64).unwrap();
        l.powf(delta) * (-t * l).exp()
    };
    let mut measured = g(0);
    if diffusivity > 0.0 && dim > 0 {
        // Solve λ(n) = δ/t for the continuous peak location.
        let peak = (delta / t).powf(1.0 / op.half_order as f64);
        let n_star = ((peak - shift) / (diffusivity * TWO_PI * TWO_PI)).max(0.0);
        let below = n_star.floor() as u64;
        let mut n = below;
        loop {
            if is_sum_of_squares(n, dim) {
                measured = measured.max(g(n));
                break;
            }
            if n == 0 {
                break;
            }
            n -= 1;
        }
        let mut n = below + 1;
        while !is_sum_of_squares(n, dim) {
            n += 1;
        }
        measured = measured.max(g(n));
    }
    let bound = if delta == 0.0 { 1.0 } else { (delta / std::f64::consts::E).powf(delta) * t.powf(-delta) };
    Ok(SmoothingBound { measured, bound })
}

/// A linear term `a · D^α` of the nonlinearity, without its scalar function.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeTerm {
    pub coefficient: f64,
    pub alpha: MultiIndex,
}

fn check_terms(op: &EllipticOperator, terms: &[DerivativeTerm]) -> Result<()> {
    let max = 2 * op.half_order as usize - 1;
    for t in terms {
        if t.alpha.order() > max {
            return Err(invalid(format!(
                "derivative order {} exceeds {max} for an operator of order {}",
                t.alpha.order(),
                op.order()
            )));
        }
    }
    Ok(())
}

/// `(-A)^{-δ} Σ a_α D^α z_α`.
pub fn b_operator(
    op: &EllipticOperator,
    delta: f64,
    terms: &[DerivativeTerm],
    z: &[SpectralField],
) -> Result<SpectralField> {
    if terms.len() != z.len() {
        return Err(Error::SizeMismatch(format!("{} terms but {} component fields", terms.len(), z.len())));
    }
    check_terms(op, terms)?;
    let Some(first) = z.first() else {
        return Err(invalid("b_operator needs at least one component to fix the grid; use b_operator_on"));
    };
    b_operator_on(op, delta, terms, z, first.dim(), first.cutoff())
}

/// As [`b_operator`], with the grid given explicitly so the term list may be
/// empty.
pub fn b_operator_on(
    op: &EllipticOperator,
    delta: f64,
    terms: &[DerivativeTerm],
    z: &[SpectralField],
    dim: usize,
    cutoff: usize,
) -> Result<SpectralField> {
    if terms.len() != z.len() {
        return Err(Error::SizeMismatch(format!("{} terms but {} component fields", terms.len(), z.len())));
    }
    check_terms(op, terms)?;
    let mut sum = SpectralField::zeros(dim, cutoff);
    for (t, zi) in terms.iter().zip(z) {
        sum.axpy(t.coefficient, &derivative(zi, &t.alpha)?)?;
    }
    op.discretize(dim, cutoff)?.power(-delta, &sum)
}

/// `(∫ (Σ_i z_i²)^{p/2})^{1/p}`, the norm of `L^p(T^N; R^γ)`.
pub fn vector_lp_norm(z: &[SpectralField], p: f64) -> Result<f64> {
    let Some(first) = z.first() else {
        return Ok(0.0);
    };
    let grids: Vec<GridField> = z.iter().map(|f| f.quadrature_grid()).collect();
    let n = grids[0].len();
    for g in &grids {
        if g.len() != n {
            return Err(Error::SizeMismatch("component fields on different grids".into()));
        }
    }
    let _ = first;
    let mut acc = 0.0;
    for i in 0..n {
        let s: f64 = grids.iter().map(|g| g.values()[i].powi(2)).sum();
        acc += s.powf(p / 2.0);
    }
    Ok((acc / n as f64).powf(1.0 / p))
}

/// Empirical `sup ‖Bz‖_{L^p} / ‖z‖_{L^p(R^γ)}` over random smooth `z`.
pub fn b_operator_norm_probe(
    op: &EllipticOperator,
    delta: f64,
    terms: &[DerivativeTerm],
    p: f64,
    trials: usize,
    dim: usize,
    cutoff: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    if trials == 0 {
        return Err(invalid("norm probe needs at least one trial"));
    }
    if terms.is_empty() {
        return Ok(0.0);
    }
    check_terms(op, terms)?;
    let disc = op.discretize(dim, cutoff)?;
    let inverse = disc.multiplier(|l| l.powf(-delta));
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let z: Vec<SpectralField> = terms.iter().map(|_| crate::rng::random_field(rng, dim, cutoff, 1.0)).collect();
        let mut sum = SpectralField::zeros(dim, cutoff);
        for (t, zi) in terms.iter().zip(&z) {
            sum.axpy(t.coefficient, &derivative(zi, &t.alpha)?)?;
        }
        let bz = inverse.apply(&sum)?;
        let denom = vector_lp_norm(&z, p)?;
        if denom > 0.0 {
            worst = worst.max(lp_norm(&bz, p)? / denom);
        }
    }
    Ok(worst)
}

/// `sup_k |Π(2πk_j)^{α_j}| λ(k)^{-δ}` over the retained modes: the exact
/// `L²` norm of a single-term `B` on a diagonal operator.
pub fn single_term_multiplier_bound(
    op: &EllipticOperator,
    delta: f64,
    alpha: &MultiIndex,
    dim: usize,
    cutoff: usize,
) -> Result<f64> {
    if !op.is_diagonal() {
        return Err(Error::Unsupported("multiplier bound requires a diagonal operator".into()));
    }
    let mut worst: f64 = 0.0;
    for_each_mode(dim, cutoff, |_, k| {
        let f = crate::spectral::derivative_factor(k, alpha.components()).abs();
        worst = worst.max(f * op.symbol(k).unwrap().powf(-delta));
    });
    Ok(worst)
}
