//! Total-degree multi-index sets and tensorized Hermite-function bases.
//!
//! The univariate family is `ψ₀ = 1`, `ψ₁ = x` and, for `j ≥ 2`,
//! `ψⱼ(x) = Heⱼ(x)·exp(−x²/4)/√(j!)` with `Heⱼ` the probabilists' Hermite
//! polynomial. Keeping the first two elements unweighted makes affine maps
//! exactly representable.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Highest derivative order supported per variable.
pub const MAX_DERIVATIVE_ORDER: u8 = 2;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex {
    pub degrees: Vec<u32>,
}

impl MultiIndex {
    pub fn new(degrees: Vec<u32>) -> Self {
        MultiIndex { degrees }
    }

    pub fn total_degree(&self) -> u32 {
        self.degrees.iter().sum()
    }

    pub fn is_constant(&self) -> bool {
        self.degrees.iter().all(|&d| d == 0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSet {
    pub active_variables: Vec<usize>,
    pub indices: Vec<MultiIndex>,
    pub max_total_degree: u32,
}

/// All multi-indices of total degree at most `max_degree` over `active_variables`,
/// graded by total degree.
///
/// Degree zero and an empty variable list are accepted and give the constant
/// basis; map components need both (the first component's `c`, and `h` when
/// the map degree is one).
pub fn total_degree_set(active_variables: &[usize], max_degree: u32) -> BasisSet {
    debug_assert!(active_variables.windows(2).all(|w| w[0] < w[1]), "active variables must increase");
    let k = active_variables.len();
    let mut indices = Vec::new();
    let mut current = vec![0u32; k];
    for degree in 0..=max_degree {
        if k == 0 {
            if degree == 0 {
                indices.push(MultiIndex::new(Vec::new()));
            }
            continue;
        }
        compositions(&mut current, 0, degree, &mut indices);
    }
    let mut set = BasisSet { active_variables: active_variables.to_vec(), indices, max_total_degree: max_degree };
    set.ensure_affine_terms();
    set
}

// Enumerates degree vectors summing to `remaining`, first slot descending.
fn compositions(current: &mut [u32], pos: usize, remaining: u32, out: &mut Vec<MultiIndex>) {
    if pos == current.len() - 1 {
        current[pos] = remaining;
        out.push(MultiIndex::new(current.to_vec()));
        return;
    }
    for v in (0..=remaining).rev() {
        current[pos] = v;
        compositions(current, pos + 1, remaining - v, out);
    }
    current[pos] = 0;
}

impl BasisSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn num_active(&self) -> usize {
        self.active_variables.len()
    }

    /// Largest degree used for each active variable.
    pub fn max_degree_per_variable(&self) -> Vec<u32> {
        let mut out = vec![0u32; self.num_active()];
        for idx in &self.indices {
            for (o, &d) in out.iter_mut().zip(&idx.degrees) {
                *o = (*o).max(d);
            }
        }
        out
    }

    /// Position of `var` in the active list, if present.
    pub fn local_position(&self, var: usize) -> Option<usize> {
        self.active_variables.binary_search(&var).ok()
    }

    // Adds the constant term when missing. Linear terms are added only when
    // the degree bound allows them: a degree-0 set stays constant.
    fn ensure_affine_terms(&mut self) {
        let k = self.num_active();
        let constant = MultiIndex::new(vec![0; k]);
        if !self.indices.contains(&constant) {
            self.indices.insert(0, constant);
        }
        if self.max_total_degree >= 1 {
            for i in 0..k {
                let mut deg = vec![0; k];
                deg[i] = 1;
                let lin = MultiIndex::new(deg);
                if !self.indices.contains(&lin) {
                    self.indices.push(lin);
                }
            }
        }
    }

    /// Evaluates all basis functions on a point restricted to the active variables.
    ///
    /// `orders[i]` is the derivative order applied to the `i`-th active variable.
    pub fn eval_local(&self, local_point: &[f64], orders: &[u8]) -> Result<Vec<f64>> {
        let k = self.num_active();
        if local_point.len() != k {
            return Err(Error::DimensionMismatch { expected: k, found: local_point.len() });
        }
        if orders.len() != k {
            return Err(Error::DimensionMismatch { expected: k, found: orders.len() });
        }
        if let Some(&bad) = orders.iter().find(|&&o| o > MAX_DERIVATIVE_ORDER) {
            return Err(Error::UnsupportedDerivativeOrder(bad));
        }
        let maxdeg = self.max_degree_per_variable();
        let tables: Vec<Vec<[f64; 3]>> =
            local_point.iter().zip(&maxdeg).map(|(&x, &m)| hermite_function_table(x, m as usize)).collect();
        Ok(self
            .indices
            .iter()
            .map(|idx| {
                idx.degrees
                    .iter()
                    .enumerate()
                    .map(|(v, &d)| tables[v][d as usize][orders[v] as usize])
                    .product()
            })
            .collect())
    }
}

/// Evaluates `b` at a full point, indexing `point` by global variable number.
///
/// `derivative_orders` lists `(variable, order)` pairs; variables absent from
/// the list are not differentiated. Differentiating with respect to an
/// inactive variable yields zeros.
pub fn eval_basis(b: &BasisSet, point: &[f64], derivative_orders: &[(usize, u8)]) -> Result<Vec<f64>> {
    if let Some(&(_, bad)) = derivative_orders.iter().find(|(_, o)| *o > MAX_DERIVATIVE_ORDER) {
        return Err(Error::UnsupportedDerivativeOrder(bad));
    }
    if let Some(&max_var) = b.active_variables.last() {
        if point.len() <= max_var {
            return Err(Error::DimensionMismatch { expected: max_var + 1, found: point.len() });
        }
    }
    let mut orders = vec![0u8; b.num_active()];
    for &(var, order) in derivative_orders {
        match b.local_position(var) {
            Some(pos) => orders[pos] = orders[pos].saturating_add(order),
            None if order > 0 => return Ok(vec![0.0; b.len()]),
            None => {}
        }
    }
    if let Some(&bad) = orders.iter().find(|&&o| o > MAX_DERIVATIVE_ORDER) {
        return Err(Error::UnsupportedDerivativeOrder(bad));
    }
    let local: Vec<f64> = b.active_variables.iter().map(|&v| point[v]).collect();
    b.eval_local(&local, &orders)
}

/// Probabilists' Hermite polynomial `Heⱼ(x)`.
pub fn hermite_polynomial(j: usize, x: f64) -> f64 {
    let mut p0 = 1.0;
    if j == 0 {
        return p0;
    }
    let mut p1 = x;
    for i in 1..j {
        let p2 = x * p1 - i as f64 * p0;
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// `[ψⱼ(x), ψⱼ'(x), ψⱼ''(x)]` for `j = 0..=max_degree`.
pub fn hermite_function_table(x: f64, max_degree: usize) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(max_degree + 1);
    out.push([1.0, 0.0, 0.0]);
    if max_degree == 0 {
        return out;
    }
    out.push([x, 1.0, 0.0]);
    if max_degree == 1 {
        return out;
    }
    let mut he = vec![0.0; max_degree + 1];
    he[0] = 1.0;
    he[1] = x;
    for j in 1..max_degree {
        he[j + 1] = x * he[j] - j as f64 * he[j - 1];
    }
    let w = libm::exp(-0.25 * x * x);
    let mut fact = 1.0;
    for j in 2..=max_degree {
        fact *= j as f64;
        let s = w / libm::sqrt(fact);
        let jf = j as f64;
        let v = he[j];
        let d1 = jf * he[j - 1] - 0.5 * x * v;
        let d2 = jf * (jf - 1.0) * he[j - 2] - x * jf * he[j - 1] + (0.25 * x * x - 0.5) * v;
        out.push([v * s, d1 * s, d2 * s]);
    }
    out
}

/// Single univariate element and its first two derivatives.
pub fn hermite_function(j: usize, x: f64) -> [f64; 3] {
    hermite_function_table(x, j)[j]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_difference_gradient;
    use proptest::prelude::*;

    fn degrees(set: &BasisSet) -> Vec<Vec<u32>> {
        set.indices.iter().map(|m| m.degrees.clone()).collect()
    }

    fn binom(n: u64, k: u64) -> u64 {
        (1..=k).fold(1, |acc, i| acc * (n + 1 - i) / i)
    }

    #[test]
    fn univariate_linear_set() {
        let s = total_degree_set(&[1], 1);
        assert_eq!(degrees(&s), vec![vec![0], vec![1]]);
    }

    #[test]
    fn bivariate_quadratic_set() {
        let s = total_degree_set(&[1, 2], 2);
        assert_eq!(degrees(&s), vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]);
    }

    #[test]
    fn trivariate_linear_set() {
        assert_eq!(total_degree_set(&[1, 2, 3], 1).len(), 4);
    }

    #[test]
    fn degenerate_sets_are_constant() {
        assert_eq!(degrees(&total_degree_set(&[], 3)), vec![Vec::<u32>::new()]);
        assert_eq!(degrees(&total_degree_set(&[0, 4], 0)), vec![vec![0, 0]]);
    }

    #[test]
    fn eval_examples() {
        let s = total_degree_set(&[0, 1], 2);
        let v = eval_basis(&s, &[0.7, -1.3], &[]).unwrap();
        assert_eq!(v[0], 1.0);
        let lin = eval_basis(&total_degree_set(&[0], 1), &[0.0], &[]).unwrap();
        assert_eq!(lin[1], 0.0);
        assert_eq!(hermite_polynomial(2, 1.0), 0.0);
        assert_eq!(hermite_function(2, 1.0)[0], 0.0);
    }

    #[test]
    fn rejects_third_derivatives() {
        let s = total_degree_set(&[0], 2);
        assert_eq!(eval_basis(&s, &[0.1], &[(0, 3)]), Err(Error::UnsupportedDerivativeOrder(3)));
        assert_eq!(eval_basis(&s, &[0.1], &[(0, 2), (0, 1)]), Err(Error::UnsupportedDerivativeOrder(3)));
    }

    #[test]
    fn inactive_derivative_is_zero() {
        let s = total_degree_set(&[0, 2], 2);
        let v = eval_basis(&s, &[0.3, 9.0, -0.4], &[(1, 1)]).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn hermite_matches_closed_forms() {
        for &x in &[-2.5, -0.3, 0.0, 1.1, 3.0] {
            assert!((hermite_polynomial(3, x) - (x * x * x - 3.0 * x)).abs() < 1e-12);
            let he4 = x.powi(4) - 6.0 * x * x + 3.0;
            assert!((hermite_polynomial(4, x) - he4).abs() < 1e-12);
            let expect = he4 * (-x * x / 4.0).exp() / 24f64.sqrt();
            assert!((hermite_function(4, x)[0] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn cardinality_is_binomial() {
        for k in 1..=5usize {
            for beta in 1..=4u32 {
                let vars: Vec<usize> = (0..k).collect();
                assert_eq!(total_degree_set(&vars, beta).len() as u64, binom(k as u64 + beta as u64, k as u64));
            }
        }
    }

    proptest! {
        #[test]
        fn derivatives_match_finite_differences(j in 0usize..=8, x in -3.0f64..3.0) {
            let t = hermite_function(j, x);
            let d1 = finite_difference_gradient(|p| hermite_function(j, p[0])[0], &[x], 1e-5)[0];
            let d2 = finite_difference_gradient(|p| hermite_function(j, p[0])[1], &[x], 1e-5)[0];
            prop_assert!((t[1] - d1).abs() <= 1e-6 * t[1].abs().max(1.0));
            prop_assert!((t[2] - d2).abs() <= 1e-6 * t[2].abs().max(1.0));
        }

        #[test]
        fn restriction_is_consistent(point in prop::collection::vec(-3.0f64..3.0, 5), o1 in 0u8..=2, o2 in 0u8..=2) {
            let s = total_degree_set(&[1, 3], 3);
            let full = eval_basis(&s, &point, &[(1, o1), (3, o2)]).unwrap();
            let local = s.eval_local(&[point[1], point[3]], &[o1, o2]).unwrap();
            prop_assert_eq!(full, local);
        }

        #[test]
        fn indices_unique_and_bounded(k in 1usize..5, beta in 0u32..5) {
            let vars: Vec<usize> = (0..k).map(|i| 2 * i).collect();
            let s = total_degree_set(&vars, beta);
            let mut sorted = s.indices.clone();
            sorted.sort();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), s.len());
            prop_assert!(s.indices.iter().all(|m| m.total_degree() <= beta));
        }
    }
}
