//! Numerical checks of the superposition estimates.
//!
//! This covers the multivariate chain rule with generated combinatorial
//! constants, the Gagliardo-Nirenberg interpolation step, Moser-type bounds
//! for `G(f)` and `G(x, f)`, the simpler first-order bound, and discrete
//! Hölder norms.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{ScalarFunction, SeparableFunction};
use crate::rng;
use crate::spectral::{
    derivative, forward_transform, quadrature_points, sobolev_norm, GridField, MultiIndex, SpectralField, TrigKind,
    TrigPolynomial,
};

/// One term `C · G^{(k)}(f) · Π_i D^{α_i} f` of the chain-rule expansion.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainRuleTerm {
    /// Order `k` of the derivative applied to the outer function.
    pub outer_order: usize,
    /// The inner multi-indices `α_1, …, α_k`, in canonical (descending) order.
    pub parts: Vec<MultiIndex>,
    pub constant: u64,
}

fn canonical(mut parts: Vec<MultiIndex>) -> Vec<MultiIndex> {
    parts.sort_by(|a, b| b.order().cmp(&a.order()).then_with(|| b.cmp(a)));
    parts
}

/// Expansion of `D^γ G(f)`, generated by differentiating the seed `G(f)`
/// one direction at a time and merging equal terms.
///
/// Terms are ordered by decreasing outer order, then by their parts.
pub fn faa_di_bruno_terms(gamma: &MultiIndex) -> Result<Vec<ChainRuleTerm>> {
    if gamma.order() == 0 {
        return Err(invalid("chain-rule expansion needs |γ| >= 1"));
    }
    let dim = gamma.dim();
    let directions: Vec<usize> = gamma
        .components()
        .iter()
        .enumerate()
        .flat_map(|(axis, &count)| std::iter::repeat_n(axis, count as usize))
        .collect();

    // The seed G(f): outer order 0, no parts.
    let mut terms: BTreeMap<(usize, Vec<MultiIndex>), u64> = BTreeMap::new();
    terms.insert((0, vec![]), 1);
    for axis in directions {
        let e = MultiIndex::unit(dim, axis);
        let mut next: BTreeMap<(usize, Vec<MultiIndex>), u64> = BTreeMap::new();
        for ((k, parts), c) in terms {
            // Differentiate the outer factor: G^{(k)} → G^{(k+1)} · D^e f.
            let mut grown = parts.clone();
            grown.push(e.clone());
            *next.entry((k + 1, canonical(grown))).or_default() += c;
            // Differentiate each inner factor.
            for i in 0..parts.len() {
                let mut bumped = parts.clone();
                bumped[i] = bumped[i].checked_add(&e)?;
                *next.entry((k, canonical(bumped))).or_default() += c;
            }
        }
        terms = next;
    }
    let mut out: Vec<ChainRuleTerm> = terms
        .into_iter()
        .map(|((outer_order, parts), constant)| ChainRuleTerm { outer_order, parts, constant })
        .collect();
    out.sort_by(|a, b| b.outer_order.cmp(&a.outer_order).then_with(|| b.parts.cmp(&a.parts)));
    Ok(out)
}

/// Grid values of `D^β f` for every `β` up to `max_order`, on an `n^N` grid.
struct DerivativeTable {
    grid: GridField,
    values: HashMap<MultiIndex, Vec<f64>>,
}

impl DerivativeTable {
    fn new(f: &SpectralField, max_order: usize, points: usize) -> Result<Self> {
        let grid = f.to_grid(points)?;
        let mut values = HashMap::new();
        for beta in MultiIndex::all_up_to(f.dim(), max_order) {
            let v = if beta.is_zero() {
                grid.values().to_vec()
            } else {
                derivative(f, &beta)?.to_grid(points)?.into_values()
            };
            values.insert(beta, v);
        }
        Ok(DerivativeTable { grid, values })
    }

    fn len(&self) -> usize {
        self.grid.len()
    }

    /// `G^{(k)}(f(x))` for `k = 0..=order` at every node.
    fn outer(&self, g: &ScalarFunction, order: usize) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::with_capacity(self.len()); order + 1];
        for &v in self.grid.values() {
            for (k, d) in g.derivatives(v, order).into_iter().enumerate() {
                out[k].push(d);
            }
        }
        out
    }

    /// Pointwise chain rule `D^γ G(f)` given the outer derivatives.
    fn chain(&self, outer: &[Vec<f64>], gamma: &MultiIndex) -> Result<Vec<f64>> {
        if gamma.is_zero() {
            return Ok(outer[0].clone());
        }
        let mut acc = vec![0.0; self.len()];
        for t in faa_di_bruno_terms(gamma)? {
            let gk = &outer[t.outer_order];
            let factors: Vec<&Vec<f64>> = t.parts.iter().map(|a| &self.values[a]).collect();
            let c = t.constant as f64;
            for (i, slot) in acc.iter_mut().enumerate() {
                let prod: f64 = factors.iter().map(|f| f[i]).product();
                *slot += c * gk[i] * prod;
            }
        }
        Ok(acc)
    }
}

/// Grid used to evaluate norms of superpositions: twice the quadrature grid.
fn fine_points(cutoff: usize) -> usize {
    2 * quadrature_points(cutoff)
}

/// `D^γ G(f)` assembled from the chain-rule expansion on the oversampled
/// grid and truncated to the cutoff of `f`.
pub fn chain_rule_eval(g: &ScalarFunction, f: &SpectralField, gamma: &MultiIndex) -> Result<SpectralField> {
    g.require_order(gamma.order())?;
    let points = quadrature_points(f.cutoff());
    let table = DerivativeTable::new(f, gamma.order(), points)?;
    let outer = table.outer(g, gamma.order());
    let values = table.chain(&outer, gamma)?;
    forward_transform(&GridField::new(f.dim(), points, values)?, f.cutoff())
}

/// `D^γ G(f)` at the nodes of an `n^N` grid, without any transform.
pub fn chain_rule_on_grid(
    g: &ScalarFunction,
    f: &SpectralField,
    gamma: &MultiIndex,
    points: usize,
) -> Result<GridField> {
    g.require_order(gamma.order())?;
    let table = DerivativeTable::new(f, gamma.order(), points)?;
    let outer = table.outer(g, gamma.order());
    GridField::new(f.dim(), points, table.chain(&outer, gamma)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolationCheck {
    /// `‖f‖_{W^{|α|, mp/|α|}}`.
    pub lhs: f64,
    /// `‖f‖_{W^{1,mp}}^{1-θ} ‖f‖_{W^{m,p}}^θ`.
    pub rhs: f64,
    pub theta: f64,
}

/// Both sides of the interpolation inequality used for each chain-rule
/// factor, with `θ = (|α| - 1) / (m - 1)`.
pub fn interpolation_check(f: &SpectralField, m: usize, p: f64, alpha: &MultiIndex) -> Result<InterpolationCheck> {
    let a = alpha.order();
    if m < 2 {
        return Err(invalid(format!("interpolation needs m >= 2, got {m}")));
    }
    if a == 0 || a > m {
        return Err(invalid(format!("need 1 <= |α| <= m, got |α| = {a}, m = {m}")));
    }
    let theta = (a as f64 - 1.0) / (m as f64 - 1.0);
    let mp = m as f64 * p;
    let lhs = sobolev_norm(f, a, mp / a as f64)?;
    let low = sobolev_norm(f, 1, mp)?;
    let high = sobolev_norm(f, m, p)?;
    let rhs = low.powf(1.0 - theta) * high.powf(theta);
    Ok(InterpolationCheck { lhs, rhs, theta })
}

/// `x ↦ a^x (b/a)^{(m-x)/(m-1)}`, the bound on a chain-rule product with
/// `x` inner factors.
pub fn interpolation_product(a: f64, b: f64, m: usize, x: usize) -> f64 {
    let w = (m as f64 - x as f64) / (m as f64 - 1.0);
    a.powf(x as f64) * (b / a).powf(w)
}

/// Index in `1..=m` maximizing [`interpolation_product`].
pub fn interpolation_product_argmax(a: f64, b: f64, m: usize) -> usize {
    (1..=m)
        .max_by(|&x, &y| interpolation_product(a, b, m, x).total_cmp(&interpolation_product(a, b, m, y)))
        .unwrap_or(1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoserReport {
    /// `‖G(f)‖_{W^{m,p}}`.
    pub lhs: f64,
    /// `1 + ‖f‖^m_{W^{1,mp}} + ‖f‖_{W^{m,p}}`.
    pub rhs: f64,
    pub ratio: f64,
    pub function: String,
    pub field: String,
    pub m: usize,
    pub p: f64,
}

fn moser_rhs(f: &SpectralField, m: usize, p: f64) -> Result<f64> {
    Ok(1.0 + sobolev_norm(f, 1, m as f64 * p)?.powi(m as i32) + sobolev_norm(f, m, p)?)
}

fn report(lhs: f64, rhs: f64, function: String, f: &SpectralField, m: usize, p: f64) -> MoserReport {
    MoserReport {
        lhs,
        rhs,
        ratio: lhs / rhs,
        function,
        field: format!("N={} K={} ‖f‖_L2={:.6}", f.dim(), f.cutoff(), f.energy().sqrt()),
        m,
        p,
    }
}

fn check_exponents(m: usize, p: f64) -> Result<()> {
    if m < 1 {
        return Err(invalid("Sobolev order must be positive"));
    }
    if !(p >= 1.0 && p.is_finite()) {
        return Err(invalid(format!("exponent must satisfy p >= 1, got {p}")));
    }
    Ok(())
}

/// `‖G(f)‖_{W^{m,p}}` with every derivative assembled pointwise on the fine
/// grid, so no truncation of `G(f)` enters the norm.
pub fn superposition_sobolev_norm(g: &ScalarFunction, f: &SpectralField, m: usize, p: f64) -> Result<f64> {
    g.require_order(m)?;
    let table = DerivativeTable::new(f, m, fine_points(f.cutoff()))?;
    let outer = table.outer(g, m);
    let mut acc = 0.0;
    for alpha in MultiIndex::all_up_to(f.dim(), m) {
        let v = table.chain(&outer, &alpha)?;
        acc += v.iter().map(|x| x.abs().powf(p)).sum::<f64>() / table.len() as f64;
    }
    Ok(acc.powf(1.0 / p))
}

/// Both sides of `‖G(f)‖_{W^{m,p}} ≤ C (1 + ‖f‖^m_{W^{1,mp}} + ‖f‖_{W^{m,p}})`.
pub fn moser_check(g: &ScalarFunction, f: &SpectralField, m: usize, p: f64) -> Result<MoserReport> {
    check_exponents(m, p)?;
    let lhs = superposition_sobolev_norm(g, f, m, p)?;
    Ok(report(lhs, moser_rhs(f, m, p)?, g.label(), f, m, p))
}

/// `‖G(·, f)‖_{W^{m,p}}` for separable `G(x, ξ) = g(x) h(ξ)`, by Leibniz
/// over `g` and the chain rule over `h`.
pub fn separable_superposition_sobolev_norm(g: &SeparableFunction, f: &SpectralField, m: usize, p: f64) -> Result<f64> {
    g.function.require_order(m)?;
    g.spatial.check_dim(f.dim())?;
    let points = fine_points(f.cutoff());
    let table = DerivativeTable::new(f, m, points)?;
    let outer = table.outer(&g.function, m);
    let coords: Vec<Vec<f64>> = (0..table.len()).map(|i| table.grid.coordinates(i)).collect();
    let mut chains: HashMap<MultiIndex, Vec<f64>> = HashMap::new();
    let mut acc = 0.0;
    for alpha in MultiIndex::all_up_to(f.dim(), m) {
        let mut v = vec![0.0; table.len()];
        for beta in alpha.sub_indices() {
            let rest = alpha.checked_sub(&beta).expect("β ≤ α");
            let weight = alpha.binomial(&beta);
            if !chains.contains_key(&beta) {
                chains.insert(beta.clone(), table.chain(&outer, &beta)?);
            }
            let h = &chains[&beta];
            for (i, slot) in v.iter_mut().enumerate() {
                *slot += weight * g.spatial.derivative(&rest, &coords[i]) * h[i];
            }
        }
        acc += v.iter().map(|x| x.abs().powf(p)).sum::<f64>() / table.len() as f64;
    }
    Ok(acc.powf(1.0 / p))
}

/// [`moser_check`] for an outer function depending on position.
pub fn moser_check_x_dependent(g: &SeparableFunction, f: &SpectralField, m: usize, p: f64) -> Result<MoserReport> {
    check_exponents(m, p)?;
    let lhs = separable_superposition_sobolev_norm(g, f, m, p)?;
    Ok(report(lhs, moser_rhs(f, m, p)?, format!("g(x)·{}", g.function.label()), f, m, p))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderCheck {
    /// `‖G(f)‖_{W^{1,p}}`.
    pub lhs: f64,
    /// `1 + ‖f‖_{W^{1,p}}`.
    pub rhs: f64,
    /// `max(|G(0)|, sup|G'|)`, for which `lhs ≤ constant · rhs` always holds.
    pub constant: f64,
}

pub fn first_order_check(g: &ScalarFunction, f: &SpectralField, p: f64) -> Result<FirstOrderCheck> {
    check_exponents(1, p)?;
    let lhs = superposition_sobolev_norm(g, f, 1, p)?;
    let rhs = 1.0 + sobolev_norm(f, 1, p)?;
    let lip = g.derivative_bound(1).expect("order 1 is always certified");
    Ok(FirstOrderCheck { lhs, rhs, constant: g.value(0.0).abs().max(lip) })
}

/// Discrete `C^{k,λ}` norm: the largest sup norm of `D^α u` for `|α| ≤ k`
/// plus the largest `λ`-Hölder quotient of the order-`k` derivatives over
/// all pairs of quadrature-grid nodes, with periodic distance.
pub fn holder_norm(u: &SpectralField, k: usize, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(invalid(format!("Hölder exponent must lie in (0, 1), got {lambda}")));
    }
    let points = quadrature_points(u.cutoff());
    let mut sup: f64 = 0.0;
    let mut quotient: f64 = 0.0;
    for alpha in MultiIndex::all_up_to(u.dim(), k) {
        let g = derivative(u, &alpha)?.to_grid(points)?;
        sup = sup.max(g.sup_norm());
        if alpha.order() == k {
            quotient = quotient.max(holder_quotient(&g, lambda));
        }
    }
    Ok(sup + quotient)
}

/// `max_{x ≠ y} |g(x) - g(y)| / d(x, y)^λ` over grid nodes.
pub fn holder_quotient(g: &GridField, lambda: f64) -> f64 {
    let n = g.points();
    let dim = g.dim();
    let len = g.len();
    // The quotient is translation invariant in the shift, so iterate over
    // shifts and then over base points.
    let mut best: f64 = 0.0;
    let mut shift = vec![0usize; dim];
    for s in 1..len {
        let mut rem = s;
        for axis in (0..dim).rev() {
            shift[axis] = rem % n;
            rem /= n;
        }
        let dist2: f64 = shift
            .iter()
            .map(|&d| {
                let d = d.min(n - d) as f64 / n as f64;
                d * d
            })
            .sum();
        let denom = dist2.sqrt().powf(lambda);
        let vals = g.values();
        for i in 0..len {
            let mut j = 0;
            let mut rem_i = i;
            let mut stride = 1;
            for axis in (0..dim).rev() {
                let c = (rem_i % n + shift[axis]) % n;
                rem_i /= n;
                j += c * stride;
                stride *= n;
            }
            best = best.max((vals[i] - vals[j]).abs() / denom);
        }
    }
    best
}

/// `‖u‖_{C^{k,λ}} / ‖u‖_{W^{m,p}}`, for checking the embedding with
/// `p > N` and `λ < 1 - N/p`.
pub fn embedding_ratio(u: &SpectralField, k: usize, lambda: f64, m: usize, p: f64) -> Result<f64> {
    let n = u.dim() as f64;
    if !(p > n) || !(lambda < 1.0 - n / p) {
        return Err(invalid(format!("embedding needs p > N and λ < 1 - N/p (N = {n}, p = {p}, λ = {lambda})")));
    }
    Ok(holder_norm(u, k, lambda)? / sobolev_norm(u, m, p)?)
}

// ---------------------------------------------------------------------------
// Frozen Moser suite
// ---------------------------------------------------------------------------

/// One randomized case of the Moser suite, before amplitude scaling.
#[derive(Clone, Debug)]
pub struct MoserCase {
    pub function: ScalarFunction,
    pub field: SpectralField,
    pub m: usize,
    pub p: f64,
}

pub const MOSER_SUITE_SEED: u64 = 0x4d6f_7365_7253_7569;
pub const MOSER_SCALES: [f64; 4] = [1.0, 2.0, 4.0, 8.0];

fn random_catalog_function(r: &mut impl Rng) -> ScalarFunction {
    match r.random_range(0..4) {
        0 => ScalarFunction::tanh(r.random_range(0.5..2.0)),
        1 => ScalarFunction::atan(r.random_range(0.5..2.0)),
        2 => ScalarFunction::Sine { amplitude: r.random_range(0.5..1.5), frequency: r.random_range(0.3..1.2) },
        _ => ScalarFunction::clamped_polynomial(
            vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-0.5..0.5)],
            r.random_range(1.0..3.0),
        ),
    }
}

/// Random smooth trigonometric field with a few low modes.
pub fn random_smooth_field(r: &mut impl Rng, dim: usize, cutoff: usize, bandwidth: usize) -> SpectralField {
    let f = rng::random_field(r, dim, bandwidth.min(cutoff), 2.0);
    let f = f.with_cutoff(cutoff);
    let norm = f.energy().sqrt().max(1e-12);
    f.scale(1.0 / norm)
}

/// The frozen randomized suite: `count` cases in dimensions 1 and 2.
pub fn moser_suite(count: usize, seed: u64) -> Vec<MoserCase> {
    (0..count as u64)
        .map(|i| {
            let mut r = rng::stream(seed, &[i]);
            let dim = 1 + (i % 2) as usize;
            let cutoff = if dim == 1 { 12 } else { 6 };
            MoserCase {
                function: random_catalog_function(&mut r),
                field: random_smooth_field(&mut r, dim, cutoff, 3),
                m: r.random_range(2..=3),
                p: [2.0, 3.0, 4.0][r.random_range(0..3)],
            }
        })
        .collect()
}

/// Largest Moser ratio over the suite and every scale.
pub fn moser_suite_constant(cases: &[MoserCase], scales: &[f64]) -> Result<f64> {
    use rayon::prelude::*;
    let ratios: Vec<f64> = cases
        .par_iter()
        .map(|c| {
            scales
                .iter()
                .map(|&s| moser_check(&c.function, &c.field.scale(s), c.m, c.p).map(|r| r.ratio))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<Vec<f64>>>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok(ratios.into_iter().fold(0.0, f64::max))
}

/// `sin(2πx_1)` as a spatial factor.
pub fn unit_sine(dim: usize) -> TrigPolynomial {
    let mut k = vec![0; dim];
    k[0] = 1;
    TrigPolynomial::constant(0.0).plus(1.0, k, TrigKind::Sin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{lp_norm, TWO_PI};
    use approx::assert_relative_eq;

    fn sin_x(cutoff: usize) -> SpectralField {
        SpectralField::from_fn(1, cutoff, |x| (TWO_PI * x[0]).sin())
    }

    /// Independent oracle: group the set partitions of the `|γ|` labelled
    /// directions by (block count, multiset of block multi-indices).
    fn partition_oracle(gamma: &MultiIndex) -> BTreeMap<(usize, Vec<MultiIndex>), u64> {
        let labels: Vec<usize> =
            gamma.components().iter().enumerate().flat_map(|(a, &c)| std::iter::repeat_n(a, c as usize)).collect();
        let n = labels.len();
        let mut out = BTreeMap::new();
        // Restricted growth strings enumerate set partitions.
        let mut rgs = vec![0usize; n];
        loop {
            let blocks = rgs.iter().max().unwrap() + 1;
            let mut parts = vec![MultiIndex::zero(gamma.dim()); blocks];
            for (i, &b) in rgs.iter().enumerate() {
                parts[b] = parts[b].checked_add(&MultiIndex::unit(gamma.dim(), labels[i])).unwrap();
            }
            *out.entry((blocks, canonical(parts))).or_insert(0) += 1;
            // Next restricted growth string.
            let mut i = n - 1;
            loop {
                let prefix_max = rgs[..i].iter().copied().max().unwrap_or(0);
                if i > 0 && rgs[i] <= prefix_max {
                    rgs[i] += 1;
                    for r in rgs.iter_mut().skip(i + 1) {
                        *r = 0;
                    }
                    break;
                }
                if i <= 1 {
                    return out;
                }
                rgs[i] = 0;
                i -= 1;
            }
        }
    }

    #[test]
    fn chain_rule_examples() {
        let t = faa_di_bruno_terms(&MultiIndex::new([1])).unwrap();
        assert_eq!(t, vec![ChainRuleTerm { outer_order: 1, parts: vec![MultiIndex::new([1])], constant: 1 }]);
        let t = faa_di_bruno_terms(&MultiIndex::new([2])).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!((t[0].outer_order, t[0].constant), (2, 1));
        assert_eq!((t[1].outer_order, t[1].constant, t[1].parts.clone()), (1, 1, vec![MultiIndex::new([2])]));
        let t = faa_di_bruno_terms(&MultiIndex::new([3])).unwrap();
        assert_eq!(t.iter().map(|t| t.constant).collect::<Vec<_>>(), vec![1, 3, 1]);
        assert!(faa_di_bruno_terms(&MultiIndex::zero(2)).is_err());
    }

    #[test]
    fn chain_rule_matches_partition_oracle() {
        for gamma in MultiIndex::all_up_to(2, 4).into_iter().skip(1) {
            let terms = faa_di_bruno_terms(&gamma).unwrap();
            let oracle = partition_oracle(&gamma);
            assert_eq!(terms.len(), oracle.len(), "{gamma}");
            for t in &terms {
                assert_eq!(oracle[&(t.outer_order, t.parts.clone())], t.constant, "{gamma}");
                let sum = t.parts.iter().fold(MultiIndex::zero(2), |a, b| a.checked_add(b).unwrap());
                assert_eq!(sum, gamma);
            }
        }
        // Totals for γ = (n) are Bell numbers.
        for (n, bell) in [(1, 1), (2, 2), (3, 5), (4, 15), (5, 52)] {
            let total: u64 = faa_di_bruno_terms(&MultiIndex::new([n])).unwrap().iter().map(|t| t.constant).sum();
            assert_eq!(total, bell);
        }
    }

    #[test]
    fn chain_rule_eval_examples() {
        let f = crate::rng::random_field(&mut crate::rng::stream(5, &[]), 2, 5, 2.0);
        let gamma = MultiIndex::new([1, 2]);
        let id = chain_rule_eval(&ScalarFunction::identity(), &f, &gamma).unwrap();
        assert!(id.sub(&derivative(&f, &gamma).unwrap()).unwrap().energy().sqrt() < 1e-10);

        let sq = ScalarFunction::clamped_polynomial([0.0, 0.0, 1.0], 2.0);
        let d2 = chain_rule_eval(&sq, &sin_x(4), &MultiIndex::new([2])).unwrap();
        let expected = SpectralField::from_fn(1, 4, |x| 2.0 * TWO_PI * TWO_PI * (2.0 * TWO_PI * x[0]).cos());
        assert!(d2.sub(&expected).unwrap().energy().sqrt() < 1e-10);

        let err = chain_rule_eval(&sq, &sin_x(4), &MultiIndex::new([12]));
        assert!(matches!(err, Err(crate::error::Error::InsufficientSmoothness { .. })));
    }

    #[test]
    fn chain_rule_matches_transform_of_composition() {
        // Low-band field stored with a generous cutoff keeps G(f) resolved.
        let f = random_smooth_field(&mut crate::rng::stream(6, &[]), 1, 48, 2);
        let g = ScalarFunction::tanh(1.0);
        let composed = SpectralField::from_fn(1, 48, |x| g.value(f.evaluate(x)));
        for n in 1..=3 {
            let gamma = MultiIndex::new([n]);
            let a = chain_rule_eval(&g, &f, &gamma).unwrap();
            let b = derivative(&composed, &gamma).unwrap();
            assert!(a.sub(&b).unwrap().energy().sqrt() <= 1e-8 * b.energy().sqrt());
        }
    }

    #[test]
    fn interpolation_examples() {
        let f = crate::rng::random_field(&mut crate::rng::stream(7, &[]), 1, 6, 2.0);
        let r = interpolation_check(&f, 3, 2.0, &MultiIndex::new([1])).unwrap();
        assert_eq!(r.theta, 0.0);
        assert!((r.lhs / r.rhs - 1.0).abs() < 1e-10);
        let r = interpolation_check(&f, 3, 2.0, &MultiIndex::new([3])).unwrap();
        assert_eq!(r.theta, 1.0);
        assert!((r.lhs / r.rhs - 1.0).abs() < 1e-10);
        let r = interpolation_check(&f, 3, 2.0, &MultiIndex::new([2])).unwrap();
        assert_eq!(r.theta, 0.5);
        assert!(interpolation_check(&f, 3, 2.0, &MultiIndex::new([4])).is_err());
    }

    #[test]
    fn interpolation_product_peaks_at_endpoints() {
        let mut r = crate::rng::stream(8, &[]);
        for _ in 0..500 {
            let a: f64 = r.random_range(0.01..20.0);
            let b: f64 = r.random_range(0.01..20.0);
            let m = r.random_range(2..9);
            let x = interpolation_product_argmax(a, b, m);
            assert!(x == 1 || x == m);
            assert_relative_eq!(interpolation_product(a, b, m, 1), b, max_relative = 1e-12);
            assert_relative_eq!(interpolation_product(a, b, m, m), a.powi(m as i32), max_relative = 1e-12);
        }
    }

    #[test]
    fn moser_examples() {
        let f = sin_x(6).scale(3.0);
        let r = moser_check(&ScalarFunction::identity(), &f, 2, 2.0).unwrap();
        assert!(r.ratio <= 1.0);
        let r = moser_check(&ScalarFunction::constant(0.0), &f, 2, 2.0).unwrap();
        assert_eq!(r.ratio, 0.0);
        let g = ScalarFunction::tanh(1.0);
        let r5 = moser_check(&g, &sin_x(8).scale(5.0), 2, 2.0).unwrap();
        let r10 = moser_check(&g, &sin_x(8).scale(10.0), 2, 2.0).unwrap();
        assert!(r5.ratio.is_finite() && r10.ratio < r5.ratio);
        assert!(moser_check(&ScalarFunction::clamped_polynomial([0.0, 1.0], 1.0), &f, 10, 2.0).is_err());
    }

    #[test]
    fn superposition_norm_matches_spectral_norm_for_band_limited_results() {
        // G(ξ) = ξ² on the field range is a degree-two polynomial of f.
        let f = sin_x(8).scale(0.5);
        let sq = ScalarFunction::clamped_polynomial([0.0, 0.0, 1.0], 1.0);
        let direct = superposition_sobolev_norm(&sq, &f, 3, 4.0).unwrap();
        let composed = SpectralField::from_fn(1, 8, |x| sq.value(f.evaluate(x)));
        assert_relative_eq!(direct, sobolev_norm(&composed, 3, 4.0).unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn moser_x_dependent_examples() {
        let f = crate::rng::random_field(&mut crate::rng::stream(9, &[]), 1, 6, 2.0);
        let id = SeparableFunction::uniform(ScalarFunction::identity());
        let r = moser_check_x_dependent(&id, &f, 2, 2.0).unwrap();
        assert!(r.ratio <= 1.0);
        assert_relative_eq!(
            r.lhs,
            moser_check(&ScalarFunction::identity(), &f, 2, 2.0).unwrap().lhs,
            max_relative = 1e-12
        );

        let bounded = SeparableFunction::new(unit_sine(1), ScalarFunction::constant(1.0));
        let small = moser_check_x_dependent(&bounded, &f, 2, 2.0).unwrap();
        let large = moser_check_x_dependent(&bounded, &f.scale(100.0), 2, 2.0).unwrap();
        assert_relative_eq!(small.lhs, large.lhs, max_relative = 1e-12);
        assert!(large.ratio < 1e-2 * small.ratio);

        let mixed = SeparableFunction::new(unit_sine(1), ScalarFunction::tanh(1.0));
        let r = moser_check_x_dependent(&mixed, &f, 2, 2.0).unwrap();
        assert!(r.ratio.is_finite() && r.ratio > 0.0);
    }

    #[test]
    fn first_order_examples() {
        let f = sin_x(6).scale(2.0);
        let r = first_order_check(&ScalarFunction::identity(), &f, 2.0).unwrap();
        assert!(r.lhs / r.rhs < 1.0);
        let r = first_order_check(&ScalarFunction::constant(-3.0), &f, 2.0).unwrap();
        assert_relative_eq!(r.lhs, 3.0, epsilon = 1e-13);
        assert!(r.lhs <= 3.0 * r.rhs);
        let g = ScalarFunction::atan(2.0);
        let mut worst: f64 = 0.0;
        for i in 0..10 {
            let f = random_smooth_field(&mut crate::rng::stream(10, &[i]), 1, 8, 3);
            for s in [1.0, 2.0, 4.0] {
                let r = first_order_check(&g, &f.scale(s), 3.0).unwrap();
                assert!(r.lhs <= r.constant * r.rhs);
                worst = worst.max(r.lhs / r.rhs);
            }
        }
        assert!(worst <= 2.0);
    }

    #[test]
    fn holder_examples() {
        assert_relative_eq!(holder_norm(&SpectralField::constant(2, 3, 1.0), 1, 0.3).unwrap(), 1.0, epsilon = 1e-14);
        let u = sin_x(7);
        let h = holder_norm(&u, 0, 0.5).unwrap();
        // Grid maximization oracle on the same nodes.
        let n = quadrature_points(7);
        let mut q: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let (x, y) = (i as f64 / n as f64, j as f64 / n as f64);
                    let d = (x - y).abs().min(1.0 - (x - y).abs());
                    q = q.max(((TWO_PI * x).sin() - (TWO_PI * y).sin()).abs() / d.sqrt());
                }
            }
        }
        assert_relative_eq!(h, 1.0 + q, max_relative = 1e-12);
        assert!(holder_norm(&u, 0, 1.0).is_err());
    }

    #[test]
    fn embedding_ratio_is_bounded_on_random_fields() {
        let mut worst: f64 = 0.0;
        for i in 0..8 {
            let u = crate::rng::random_field(&mut crate::rng::stream(11, &[i]), 1, 8, 2.0);
            worst = worst.max(embedding_ratio(&u, 0, 0.4, 1, 4.0).unwrap());
        }
        assert!(worst.is_finite() && worst < 5.0);
        let u = sin_x(4);
        assert!(embedding_ratio(&u, 0, 0.9, 1, 4.0).is_err());
        assert!(lp_norm(&u, 2.0).unwrap() > 0.0);
    }
}
