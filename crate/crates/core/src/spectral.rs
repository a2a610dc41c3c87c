//! Real fields on the unit torus `T^N = [0, 1)^N`.
//!
//! A field lives in one of two representations:
//!
//! * [`SpectralField`]: Fourier coefficients `c_k` for wavevectors
//!   `k ∈ {-K..K}^N`, stored row-major with the first axis slowest,
//!   so that `u(x) = Σ_k c_k exp(2πi k·x)`;
//! * [`GridField`]: point values on the uniform grid `x_j = j / n`.
//!
//! The torus has unit measure, so `‖1‖_{L^p} = 1` for every `p`.
//! Conversion goes through [`forward_transform`] and
//! [`SpectralField::to_grid`]. Nonlinear superpositions are evaluated on a
//! grid oversampled by a factor of two ([`quadrature_points`]) and the
//! result is truncated back to the cutoff.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::operator::EllipticOperator;

pub const TWO_PI: f64 = 2.0 * PI;

/// Grid points per axis that exactly carry a field with cutoff `K`.
pub fn base_points(cutoff: usize) -> usize {
    2 * cutoff + 2
}

/// Oversampled grid used for superpositions and `L^p` quadrature.
pub fn quadrature_points(cutoff: usize) -> usize {
    2 * base_points(cutoff)
}

// ---------------------------------------------------------------------------
// Multi-indices
// ---------------------------------------------------------------------------

/// A multi-index `α = (α_1, …, α_N)` selecting the partial derivative
/// `D^α = ∂_1^{α_1} ⋯ ∂_N^{α_N}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(components: impl Into<Vec<u32>>) -> Self {
        MultiIndex(components.into())
    }

    pub fn zero(dim: usize) -> Self {
        MultiIndex(vec![0; dim])
    }

    pub fn unit(dim: usize, axis: usize) -> Self {
        let mut c = vec![0; dim];
        c[axis] = 1;
        MultiIndex(c)
    }

    pub fn components(&self) -> &[u32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// `|α|`.
    pub fn order(&self) -> usize {
        self.0.iter().map(|&a| a as usize).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&a| a == 0)
    }

    pub fn checked_add(&self, other: &MultiIndex) -> Result<MultiIndex> {
        check_dim(self.dim(), other.dim())?;
        Ok(MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect()))
    }

    /// `α - β`, if `β ≤ α` componentwise.
    pub fn checked_sub(&self, other: &MultiIndex) -> Option<MultiIndex> {
        if self.dim() != other.dim() {
            return None;
        }
        self.0.iter().zip(&other.0).map(|(a, b)| a.checked_sub(*b)).collect::<Option<Vec<_>>>().map(MultiIndex)
    }

    /// Componentwise `self ≤ other`.
    pub fn le(&self, other: &MultiIndex) -> bool {
        self.dim() == other.dim() && self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    /// Multi-binomial `Π_j C(α_j, β_j)`.
    pub fn binomial(&self, beta: &MultiIndex) -> f64 {
        self.0.iter().zip(&beta.0).map(|(&a, &b)| binomial(a as u64, b as u64) as f64).product()
    }

    /// Every multi-index of dimension `dim` with `|α| ≤ max_order`, ordered by
    /// total order and then lexicographically.
    pub fn all_up_to(dim: usize, max_order: usize) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        for order in 0..=max_order {
            out.extend(Self::all_of_order(dim, order));
        }
        out
    }

    /// Every multi-index of dimension `dim` with `|α| = order`.
    pub fn all_of_order(dim: usize, order: usize) -> Vec<MultiIndex> {
        fn rec(dim: usize, left: usize, prefix: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
            if prefix.len() + 1 == dim {
                prefix.push(left as u32);
                out.push(MultiIndex(prefix.clone()));
                prefix.pop();
                return;
            }
            for a in (0..=left).rev() {
                prefix.push(a as u32);
                rec(dim, left - a, prefix, out);
                prefix.pop();
            }
        }
        if dim == 0 {
            return if order == 0 { vec![MultiIndex(vec![])] } else { vec![] };
        }
        let mut out = Vec::new();
        rec(dim, order, &mut Vec::with_capacity(dim), &mut out);
        out
    }

    /// All `β ≤ α` componentwise (including `0` and `α`).
    pub fn sub_indices(&self) -> Vec<MultiIndex> {
        let mut out = vec![Vec::with_capacity(self.dim())];
        for &a in &self.0 {
            out = out
                .into_iter()
                .flat_map(|prefix: Vec<u32>| {
                    (0..=a).map(move |b| {
                        let mut p = prefix.clone();
                        p.push(b);
                        p
                    })
                })
                .collect();
        }
        out.into_iter().map(MultiIndex).collect()
    }
}

impl std::fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(")?;
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

pub(crate) fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

// ---------------------------------------------------------------------------
// FFT plumbing
// ---------------------------------------------------------------------------

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(len, direction))
}

/// Unnormalized N-dimensional DFT over a row-major `n^dim` buffer.
fn fft_nd(buf: &mut [Complex64], dim: usize, n: usize, direction: FftDirection) {
    let fft = plan(n, direction);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    let mut line = vec![Complex64::default(); n];
    for axis in 0..dim {
        let stride = n.pow((dim - 1 - axis) as u32);
        if stride == 1 {
            fft.process_with_scratch(buf, &mut scratch);
            continue;
        }
        let block = stride * n;
        for start in (0..buf.len()).step_by(block) {
            for offset in 0..stride {
                let base = start + offset;
                for (i, v) in line.iter_mut().enumerate() {
                    *v = buf[base + i * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (i, v) in line.iter().enumerate() {
                    buf[base + i * stride] = *v;
                }
            }
        }
    }
}

/// Visits every wavevector of `{-K..K}^dim` in storage order.
pub(crate) fn for_each_mode(dim: usize, cutoff: usize, mut f: impl FnMut(usize, &[i64])) {
    let side = 2 * cutoff + 1;
    let total = side.pow(dim as u32);
    let k_max = cutoff as i64;
    let mut k = vec![-k_max; dim];
    for flat in 0..total {
        f(flat, &k);
        for axis in (0..dim).rev() {
            if k[axis] < k_max {
                k[axis] += 1;
                break;
            }
            k[axis] = -k_max;
        }
    }
}

/// `Σ_j k_j²` for every stored wavevector, in storage order.
pub fn wavenumber_squares(dim: usize, cutoff: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity((2 * cutoff + 1).pow(dim as u32));
    for_each_mode(dim, cutoff, |_, k| {
        out.push(k.iter().map(|&kj| (kj * kj) as f64).sum());
    });
    out
}

/// All stored wavevectors in storage order.
pub fn wavevectors(dim: usize, cutoff: usize) -> Vec<Vec<i64>> {
    let mut out = Vec::with_capacity((2 * cutoff + 1).pow(dim as u32));
    for_each_mode(dim, cutoff, |_, k| out.push(k.to_vec()));
    out
}

fn grid_offset(k: &[i64], n: usize) -> usize {
    let n_i = n as i64;
    k.iter().fold(0usize, |acc, &kj| acc * n + kj.rem_euclid(n_i) as usize)
}

/// Restores exact Hermitian symmetry `c_{-k} = conj(c_k)`.
///
/// With symmetric index ranges the storage index of `-k` is `len - 1 - i`.
fn symmetrize(coeffs: &mut [Complex64]) {
    let len = coeffs.len();
    for i in 0..len / 2 {
        let j = len - 1 - i;
        let avg = (coeffs[i] + coeffs[j].conj()) * 0.5;
        coeffs[i] = avg;
        coeffs[j] = avg.conj();
    }
    if len % 2 == 1 {
        let mid = len / 2;
        coeffs[mid] = Complex64::new(coeffs[mid].re, 0.0);
    }
}

// ---------------------------------------------------------------------------
// Grid fields
// ---------------------------------------------------------------------------

/// Point values on the uniform `n^N` grid, row-major with the first axis
/// slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    dim: usize,
    points: usize,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(dim: usize, points: usize, values: Vec<f64>) -> Result<Self> {
        let expected = points.pow(dim as u32);
        if values.len() != expected {
            return Err(Error::SizeMismatch(format!("{} values for a {points}^{dim} grid", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("grid field".into()));
        }
        Ok(GridField { dim, points, values })
    }

    /// Samples `f` at every grid node.
    pub fn from_fn(dim: usize, points: usize, f: impl Fn(&[f64]) -> f64) -> Self {
        let total = points.pow(dim as u32);
        let mut x = vec![0.0; dim];
        let values = (0..total)
            .map(|i| {
                grid_coordinates_into(dim, points, i, &mut x);
                f(&x)
            })
            .collect();
        GridField { dim, points, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Coordinates of node `index`.
    pub fn coordinates(&self, index: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        grid_coordinates_into(self.dim, self.points, index, &mut x);
        x
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridField {
        GridField { dim: self.dim, points: self.points, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// Equal-weight quadrature of `|g|^p`, i.e. `∫ |g|^p dx` on the unit torus.
    pub fn mean_abs_pow(&self, p: f64) -> f64 {
        let n = self.values.len() as f64;
        if p == 2.0 {
            self.values.iter().map(|v| v * v).sum::<f64>() / n
        } else {
            self.values.iter().map(|v| v.abs().powf(p)).sum::<f64>() / n
        }
    }

    pub fn lp_norm(&self, p: f64) -> f64 {
        self.mean_abs_pow(p).powf(1.0 / p)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub(crate) fn grid_coordinates_into(dim: usize, points: usize, mut index: usize, x: &mut [f64]) {
    let h = 1.0 / points as f64;
    for axis in (0..dim).rev() {
        x[axis] = (index % points) as f64 * h;
        index /= points;
    }
}

// ---------------------------------------------------------------------------
// Spectral fields
// ---------------------------------------------------------------------------

/// Truncated Fourier series of a real field on `T^N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "FieldRecord", try_from = "FieldRecord")]
pub struct SpectralField {
    dim: usize,
    cutoff: usize,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(dim: usize, cutoff: usize) -> Self {
        SpectralField { dim, cutoff, coeffs: vec![Complex64::default(); (2 * cutoff + 1).pow(dim as u32)] }
    }

    pub fn constant(dim: usize, cutoff: usize, value: f64) -> Self {
        let mut u = Self::zeros(dim, cutoff);
        let mid = u.coeffs.len() / 2;
        u.coeffs[mid] = Complex64::new(value, 0.0);
        u
    }

    /// Builds a field from raw coefficients in storage order. The
    /// coefficients are symmetrized so the field is exactly real.
    pub fn from_coefficients(dim: usize, cutoff: usize, mut coeffs: Vec<Complex64>) -> Result<Self> {
        let expected = (2 * cutoff + 1).pow(dim as u32);
        if coeffs.len() != expected {
            return Err(Error::SizeMismatch(format!(
                "{} coefficients for cutoff {cutoff} in dimension {dim}, expected {expected}",
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite("spectral coefficients".into()));
        }
        symmetrize(&mut coeffs);
        Ok(SpectralField { dim, cutoff, coeffs })
    }

    /// Sets `c_k = value` and `c_{-k} = conj(value)` for each listed mode.
    pub fn from_modes<'a>(
        dim: usize,
        cutoff: usize,
        modes: impl IntoIterator<Item = (&'a [i64], Complex64)>,
    ) -> Result<Self> {
        let mut u = Self::zeros(dim, cutoff);
        for (k, value) in modes {
            let i = u.index_of(k).ok_or_else(|| invalid(format!("wavevector {k:?} outside cutoff {cutoff}")))?;
            let j = u.coeffs.len() - 1 - i;
            u.coeffs[i] = value;
            u.coeffs[j] = value.conj();
            if i == j {
                u.coeffs[i] = Complex64::new(value.re, 0.0);
            }
        }
        Ok(u)
    }

    /// Interpolates `f` on the oversampled grid and truncates to `cutoff`.
    pub fn from_fn(dim: usize, cutoff: usize, f: impl Fn(&[f64]) -> f64) -> Self {
        let g = GridField::from_fn(dim, quadrature_points(cutoff), f);
        forward_transform(&g, cutoff).expect("quadrature grid always matches its cutoff")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    /// `2K + 1`.
    pub fn side(&self) -> usize {
        2 * self.cutoff + 1
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub(crate) fn coefficients_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn index_of(&self, k: &[i64]) -> Option<usize> {
        if k.len() != self.dim {
            return None;
        }
        let kc = self.cutoff as i64;
        let side = self.side();
        k.iter().try_fold(0usize, |acc, &kj| (kj.abs() <= kc).then(|| acc * side + (kj + kc) as usize))
    }

    pub fn wavevector(&self, mut index: usize) -> Vec<i64> {
        let side = self.side();
        let mut k = vec![0; self.dim];
        for axis in (0..self.dim).rev() {
            k[axis] = (index % side) as i64 - self.cutoff as i64;
            index /= side;
        }
        k
    }

    /// `c_k`, or zero outside the cutoff.
    pub fn mode(&self, k: &[i64]) -> Complex64 {
        self.index_of(k).map_or(Complex64::default(), |i| self.coeffs[i])
    }

    /// Mean value `c_0`.
    pub fn mean(&self) -> f64 {
        self.coeffs[self.coeffs.len() / 2].re
    }

    /// Point values on an `n^N` grid; `n` must be even and at least `2K+2`.
    pub fn to_grid(&self, points: usize) -> Result<GridField> {
        if !points.is_multiple_of(2) || points < base_points(self.cutoff) {
            return Err(Error::SizeMismatch(format!(
                "grid with {points} points per axis cannot carry cutoff {}",
                self.cutoff
            )));
        }
        let total = points.pow(self.dim as u32);
        let mut buf = vec![Complex64::default(); total];
        for_each_mode(self.dim, self.cutoff, |i, k| {
            buf[grid_offset(k, points)] = self.coeffs[i];
        });
        fft_nd(&mut buf, self.dim, points, FftDirection::Inverse);
        GridField::new(self.dim, points, buf.into_iter().map(|c| c.re).collect())
    }

    /// Values on the `(2K+2)^N` base grid.
    pub fn grid(&self) -> GridField {
        self.to_grid(base_points(self.cutoff)).expect("base grid always carries the cutoff")
    }

    /// Values on the oversampled quadrature grid.
    pub fn quadrature_grid(&self) -> GridField {
        self.to_grid(quadrature_points(self.cutoff)).expect("quadrature grid always carries the cutoff")
    }

    /// Direct trigonometric sum at an arbitrary point.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for_each_mode(self.dim, self.cutoff, |i, k| {
            let phase: f64 = TWO_PI * k.iter().zip(x).map(|(&kj, &xj)| kj as f64 * xj).sum::<f64>();
            let c = self.coeffs[i];
            acc += c.re * phase.cos() - c.im * phase.sin();
        });
        acc
    }

    /// `max_k |c_{-k} - conj(c_k)|`.
    pub fn hermitian_defect(&self) -> f64 {
        let len = self.coeffs.len();
        (0..len).map(|i| (self.coeffs[len - 1 - i] - self.coeffs[i].conj()).norm()).fold(0.0, f64::max)
    }

    /// `Σ_k |c_k|²`, which equals `‖u‖²_{L²}` by Parseval.
    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Truncates or zero-pads to a new cutoff.
    pub fn with_cutoff(&self, cutoff: usize) -> SpectralField {
        let mut out = SpectralField::zeros(self.dim, cutoff);
        for_each_mode(self.dim, cutoff.min(self.cutoff), |_, k| {
            let (src, dst) = (self.index_of(k).unwrap(), out.index_of(k).unwrap());
            out.coeffs[dst] = self.coeffs[src];
        });
        out
    }

    pub fn scale(&self, factor: f64) -> SpectralField {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|c| *c *= factor);
        out
    }

    /// `self += factor * other`.
    pub fn axpy(&mut self, factor: f64, other: &SpectralField) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += b * factor;
        }
        Ok(())
    }

    pub fn add(&self, other: &SpectralField) -> Result<SpectralField> {
        let mut out = self.clone();
        out.axpy(1.0, other)?;
        Ok(out)
    }

    pub fn sub(&self, other: &SpectralField) -> Result<SpectralField> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    pub fn check_compatible(&self, other: &SpectralField) -> Result<()> {
        check_dim(self.dim, other.dim)?;
        if self.cutoff != other.cutoff {
            return Err(Error::SizeMismatch(format!("cutoff {} vs {}", self.cutoff, other.cutoff)));
        }
        Ok(())
    }

    /// Flat little-endian record: `u32 dimension`, `u32 cutoff`, then the
    /// interleaved `f64` real/imaginary coefficient array.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 16 * self.coeffs.len());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.cutoff as u32).to_le_bytes());
        for c in &self.coeffs {
            out.extend_from_slice(&c.re.to_le_bytes());
            out.extend_from_slice(&c.im.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::SizeMismatch("truncated field header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let (dim, cutoff) = (word(0), word(4));
        let body = &bytes[8..];
        if !body.len().is_multiple_of(16) {
            return Err(Error::SizeMismatch("ragged coefficient array".into()));
        }
        let coeffs = body
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..].try_into().unwrap()),
                )
            })
            .collect();
        Self::from_coefficients(dim, cutoff, coeffs)
    }
}

/// JSON shape of a [`SpectralField`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FieldRecord {
    pub dimension: usize,
    pub cutoff: usize,
    /// Interleaved `re, im` pairs in row-major wavevector order.
    pub coefficients: Vec<f64>,
}

impl From<SpectralField> for FieldRecord {
    fn from(u: SpectralField) -> Self {
        FieldRecord {
            dimension: u.dim,
            cutoff: u.cutoff,
            coefficients: u.coeffs.iter().flat_map(|c| [c.re, c.im]).collect(),
        }
    }
}

impl TryFrom<FieldRecord> for SpectralField {
    type Error = Error;

    fn try_from(r: FieldRecord) -> Result<Self> {
        if !r.coefficients.len().is_multiple_of(2) {
            return Err(Error::SizeMismatch("odd interleaved coefficient count".into()));
        }
        let coeffs = r.coefficients.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
        SpectralField::from_coefficients(r.dimension, r.cutoff, coeffs)
    }
}

// ---------------------------------------------------------------------------
// Analytic spatial functions
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrigKind {
    Cos,
    Sin,
}

/// `amplitude · cos(2π k·x)` or `amplitude · sin(2π k·x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub amplitude: f64,
    pub wavevector: Vec<i64>,
    pub kind: TrigKind,
}

/// A real trigonometric polynomial on the torus, given in closed form.
///
/// Used for spatial coefficient factors `g(x)`, divergence-form
/// coefficients `A_ij(x)` and deterministic initial data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrigPolynomial {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub terms: Vec<TrigTerm>,
}

impl TrigPolynomial {
    pub fn constant(value: f64) -> Self {
        TrigPolynomial { constant: value, terms: vec![] }
    }

    pub fn cos(amplitude: f64, wavevector: impl Into<Vec<i64>>) -> Self {
        Self::constant(0.0).plus(amplitude, wavevector, TrigKind::Cos)
    }

    pub fn sin(amplitude: f64, wavevector: impl Into<Vec<i64>>) -> Self {
        Self::constant(0.0).plus(amplitude, wavevector, TrigKind::Sin)
    }

    pub fn plus(mut self, amplitude: f64, wavevector: impl Into<Vec<i64>>, kind: TrigKind) -> Self {
        self.terms.push(TrigTerm { amplitude, wavevector: wavevector.into(), kind });
        self
    }

    pub fn with_constant(mut self, value: f64) -> Self {
        self.constant = value;
        self
    }

    /// Largest `|k_j|` among the terms.
    pub fn bandwidth(&self) -> usize {
        self.terms.iter().flat_map(|t| t.wavevector.iter().map(|k| k.unsigned_abs() as usize)).max().unwrap_or(0)
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        for t in &self.terms {
            check_dim(dim, t.wavevector.len())?;
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.terms.iter().fold(self.constant, |acc, t| {
            let phase = TWO_PI * dot(&t.wavevector, x);
            acc + t.amplitude
                * match t.kind {
                    TrigKind::Cos => phase.cos(),
                    TrigKind::Sin => phase.sin(),
                }
        })
    }

    /// `D^β g(x)` in closed form.
    pub fn derivative(&self, beta: &MultiIndex, x: &[f64]) -> f64 {
        if beta.is_zero() {
            return self.value(x);
        }
        let order = beta.order();
        self.terms.iter().fold(0.0, |acc, t| {
            let factor: f64 =
                t.wavevector.iter().zip(beta.components()).map(|(&k, &b)| (TWO_PI * k as f64).powi(b as i32)).product();
            if factor == 0.0 {
                return acc;
            }
            let phase = TWO_PI * dot(&t.wavevector, x);
            // d/dθ cycles cos → -sin → -cos → sin and sin → cos → -sin → -cos.
            let shift = match t.kind {
                TrigKind::Cos => order,
                TrigKind::Sin => order + 3,
            } % 4;
            let v = match shift {
                0 => phase.cos(),
                1 => -phase.sin(),
                2 => -phase.cos(),
                _ => phase.sin(),
            };
            acc + t.amplitude * factor * v
        })
    }

    /// `sup_x |g(x)|` bound: `|c| + Σ |a_t|`.
    pub fn sup_bound(&self) -> f64 {
        self.terms.iter().fold(self.constant.abs(), |acc, t| acc + t.amplitude.abs())
    }

    /// Exact Fourier coefficient `ĝ(m)`.
    pub fn fourier_coefficient(&self, m: &[i64]) -> Complex64 {
        let mut c = if m.iter().all(|&v| v == 0) { Complex64::new(self.constant, 0.0) } else { Complex64::default() };
        for t in &self.terms {
            let plus = t.wavevector.as_slice() == m;
            let minus = t.wavevector.iter().zip(m).all(|(a, b)| *a == -*b) && t.wavevector.len() == m.len();
            let half = 0.5 * t.amplitude;
            match t.kind {
                TrigKind::Cos => {
                    if plus {
                        c += half;
                    }
                    if minus {
                        c += half;
                    }
                }
                TrigKind::Sin => {
                    // sin θ = (e^{iθ} - e^{-iθ}) / 2i
                    if plus {
                        c += Complex64::new(0.0, -half);
                    }
                    if minus {
                        c += Complex64::new(0.0, half);
                    }
                }
            }
        }
        c
    }

    /// Exact projection onto the modes `{-K..K}^N`.
    pub fn to_field(&self, dim: usize, cutoff: usize) -> Result<SpectralField> {
        self.check_dim(dim)?;
        let mut u = SpectralField::zeros(dim, cutoff);
        for_each_mode(dim, cutoff, |i, k| {
            u.coeffs[i] = self.fourier_coefficient(k);
        });
        Ok(u)
    }

    pub fn scaled(&self, factor: f64) -> TrigPolynomial {
        TrigPolynomial {
            constant: self.constant * factor,
            terms: self.terms.iter().map(|t| TrigTerm { amplitude: t.amplitude * factor, ..t.clone() }).collect(),
        }
    }
}

fn dot(k: &[i64], x: &[f64]) -> f64 {
    k.iter().zip(x).map(|(&kj, &xj)| kj as f64 * xj).sum()
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Coefficients of the trigonometric interpolant of `g`, truncated to
/// `cutoff`. The grid must be even-sized with at least `2K+2` points per axis.
pub fn forward_transform(g: &GridField, cutoff: usize) -> Result<SpectralField> {
    let n = g.points;
    if !n.is_multiple_of(2) || n < base_points(cutoff) {
        return Err(Error::SizeMismatch(format!("grid with {n} points per axis cannot resolve cutoff {cutoff}")));
    }
    let mut buf: Vec<Complex64> = g.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_nd(&mut buf, g.dim, n, FftDirection::Forward);
    let scale = 1.0 / g.values.len() as f64;
    let mut u = SpectralField::zeros(g.dim, cutoff);
    for_each_mode(g.dim, cutoff, |i, k| {
        u.coeffs[i] = buf[grid_offset(k, n)] * scale;
    });
    symmetrize(&mut u.coeffs);
    Ok(u)
}

/// Real factor `Π_j (2π k_j)^{α_j}`; the full multiplier is this times `i^{|α|}`.
pub(crate) fn derivative_factor(k: &[i64], alpha: &[u32]) -> f64 {
    k.iter().zip(alpha).map(|(&kj, &a)| (TWO_PI * kj as f64).powi(a as i32)).product()
}

pub(crate) fn times_i_power(c: Complex64, power: usize) -> Complex64 {
    match power % 4 {
        0 => c,
        1 => Complex64::new(-c.im, c.re),
        2 => -c,
        _ => Complex64::new(c.im, -c.re),
    }
}

/// `D^α u`: coefficient `k` multiplied by `Π_j (2πi k_j)^{α_j}`.
pub fn derivative(u: &SpectralField, alpha: &MultiIndex) -> Result<SpectralField> {
    check_dim(u.dim, alpha.dim())?;
    if alpha.is_zero() {
        return Ok(u.clone());
    }
    let order = alpha.order();
    let mut out = u.clone();
    for_each_mode(u.dim, u.cutoff, |i, k| {
        let f = derivative_factor(k, alpha.components());
        out.coeffs[i] = times_i_power(u.coeffs[i] * f, order);
    });
    Ok(out)
}

fn check_exponent(p: f64) -> Result<()> {
    if p >= 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("Lebesgue exponent must satisfy 1 <= p < inf, got {p}")))
    }
}

/// `(∫ |u|^p dx)^{1/p}` by equal-weight quadrature on the oversampled grid.
pub fn lp_norm(u: &SpectralField, p: f64) -> Result<f64> {
    check_exponent(p)?;
    Ok(u.quadrature_grid().lp_norm(p))
}

/// `(Σ_{|α| ≤ m} ‖D^α u‖_{L^p}^p)^{1/p}`.
pub fn sobolev_norm(u: &SpectralField, m: usize, p: f64) -> Result<f64> {
    check_exponent(p)?;
    let mut acc = 0.0;
    for alpha in MultiIndex::all_up_to(u.dim, m) {
        let d = derivative(u, &alpha)?;
        acc += d.quadrature_grid().mean_abs_pow(p);
    }
    Ok(acc.powf(1.0 / p))
}

/// `‖(-A)^δ u‖_{L^p}` for a diagonal operator.
pub fn fractional_sobolev_norm(u: &SpectralField, delta: f64, p: f64, op: &EllipticOperator) -> Result<f64> {
    check_exponent(p)?;
    if delta < 0.0 {
        return Err(invalid(format!("fractional order must be non-negative, got {delta}")));
    }
    if !op.is_diagonal() {
        return Err(Error::Unsupported("fractional Sobolev norms require a diagonal operator".into()));
    }
    lp_norm(&crate::operator::apply_fractional_power(op, delta, u)?, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sin_x(cutoff: usize) -> SpectralField {
        SpectralField::from_fn(1, cutoff, |x| (TWO_PI * x[0]).sin())
    }

    #[test]
    fn constant_transforms_to_mean_mode() {
        let g = GridField::from_fn(2, 8, |_| 1.0);
        let u = forward_transform(&g, 3).unwrap();
        for (i, c) in u.coefficients().iter().enumerate() {
            let k = u.wavevector(i);
            let expected = if k == [0, 0] { 1.0 } else { 0.0 };
            assert!((c - Complex64::new(expected, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn sine_has_expected_coefficients() {
        let u = sin_x(4);
        assert!((u.mode(&[1]) - Complex64::new(0.0, -0.5)).norm() < 1e-15);
        assert!((u.mode(&[-1]) - Complex64::new(0.0, 0.5)).norm() < 1e-15);
        assert!(u.mode(&[2]).norm() < 1e-15);
    }

    #[test]
    fn odd_or_small_grids_are_rejected() {
        let g = GridField::from_fn(1, 7, |_| 0.0);
        assert!(matches!(forward_transform(&g, 2), Err(Error::SizeMismatch(_))));
        let g = GridField::from_fn(1, 6, |_| 0.0);
        assert!(forward_transform(&g, 3).is_err());
        assert!(forward_transform(&g, 2).is_ok());
        assert!(GridField::new(1, 4, vec![0.0; 5]).is_err());
    }

    #[test]
    fn derivative_of_sine_and_constant() {
        let u = sin_x(3);
        let du = derivative(&u, &MultiIndex::new([1])).unwrap();
        let g = du.grid();
        for i in 0..g.len() {
            let x = g.coordinates(i)[0];
            assert_relative_eq!(g.values()[i], TWO_PI * (TWO_PI * x).cos(), epsilon = 1e-12);
        }
        let c = SpectralField::constant(2, 3, 4.0);
        let dc = derivative(&c, &MultiIndex::new([2, 1])).unwrap();
        assert_eq!(dc.energy(), 0.0);
        assert!(derivative(&c, &MultiIndex::new([1])).is_err());
    }

    #[test]
    fn mixed_derivative_matches_symbolic_result() {
        // D_x D_y [cos(2πx) cos(2πy)] = 4π² sin(2πx) sin(2πy)
        let u = SpectralField::from_fn(2, 2, |x| (TWO_PI * x[0]).cos() * (TWO_PI * x[1]).cos());
        let d = derivative(&u, &MultiIndex::new([1, 1])).unwrap();
        let g = d.grid();
        for i in 0..g.len() {
            let x = g.coordinates(i);
            let expected = 4.0 * PI * PI * (TWO_PI * x[0]).sin() * (TWO_PI * x[1]).sin();
            assert_relative_eq!(g.values()[i], expected, epsilon = 1e-11);
        }
    }

    #[test]
    fn lp_norm_examples() {
        assert_relative_eq!(lp_norm(&SpectralField::constant(1, 2, 1.0), 3.5).unwrap(), 1.0, epsilon = 1e-14);
        let u = sin_x(2);
        assert_relative_eq!(lp_norm(&u, 2.0).unwrap(), 0.5f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(lp_norm(&u, 4.0).unwrap(), (3.0f64 / 8.0).powf(0.25), epsilon = 1e-14);
        assert!(lp_norm(&u, 0.5).is_err());
    }

    #[test]
    fn sobolev_norm_examples() {
        let one = SpectralField::constant(1, 3, 1.0);
        assert_relative_eq!(sobolev_norm(&one, 3, 2.0).unwrap(), 1.0, epsilon = 1e-14);
        let u = sin_x(2);
        let expected = (0.5 + TWO_PI * TWO_PI / 2.0).sqrt();
        assert_relative_eq!(sobolev_norm(&u, 1, 2.0).unwrap(), expected, epsilon = 1e-13);
        assert_relative_eq!(expected, 4.49880, epsilon = 1e-5);
        assert_relative_eq!(
            sobolev_norm(&u.scale(2.0), 2, 3.0).unwrap(),
            2.0 * sobolev_norm(&u, 2, 3.0).unwrap(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn multi_index_enumeration() {
        let all = MultiIndex::all_up_to(2, 2);
        assert_eq!(all.len(), 6);
        assert_eq!(all[0], MultiIndex::zero(2));
        assert!(all.iter().all(|a| a.order() <= 2));
        assert_eq!(MultiIndex::new([2, 1]).sub_indices().len(), 6);
        assert_eq!(MultiIndex::new([3, 2]).binomial(&MultiIndex::new([1, 1])), 6.0);
        assert_eq!(binomial(6, 3), 20);
    }

    #[test]
    fn field_serialization_shapes() {
        let u = SpectralField::from_fn(2, 1, |x| (TWO_PI * (x[0] + 2.0 * x[1])).sin() + 0.3);
        let json = serde_json::to_value(&u).unwrap();
        assert_eq!(json["dimension"], 2);
        assert_eq!(json["cutoff"], 1);
        assert_eq!(json["coefficients"].as_array().unwrap().len(), 2 * 9);
        let back: SpectralField = serde_json::from_value(json).unwrap();
        assert_eq!(back, u);
        let bytes = u.to_bytes();
        assert_eq!(bytes.len(), 8 + 16 * 9);
        assert_eq!(SpectralField::from_bytes(&bytes).unwrap(), u);
        assert!(SpectralField::from_bytes(&bytes[..20]).is_err());
    }

    #[test]
    fn trig_polynomial_matches_its_projection() {
        let g =
            TrigPolynomial::constant(0.5).plus(1.5, vec![1, -2], TrigKind::Sin).plus(-0.25, vec![0, 1], TrigKind::Cos);
        let u = g.to_field(2, 3).unwrap();
        for x in [[0.1, 0.7], [0.33, 0.05], [0.9, 0.5]] {
            assert_relative_eq!(u.evaluate(&x), g.value(&x), epsilon = 1e-13);
        }
        let beta = MultiIndex::new([1, 2]);
        let du = derivative(&u, &beta).unwrap();
        let x = [0.21, 0.62];
        assert_relative_eq!(du.evaluate(&x), g.derivative(&beta, &x), max_relative = 1e-12);
    }
}
