//! The conditional independence score and its thresholding.
//!
//! `Ω̃ᵢⱼ = (1/n) Σ_l (∂ᵢ∂ⱼ log S^♯η(z^l))²` estimates `E[(∂ᵢ∂ⱼ log π)²]`,
//! which vanishes exactly when `Zᵢ ⊥ Zⱼ | Z₋ᵢⱼ`. Its sampling variance is
//! approximated by the delta method through the Fisher information of the
//! map coefficients.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::datasets::SampleMatrix;
use crate::graph::UndirectedGraph;
use crate::numerics::Matrix;
use crate::optimize::FisherInformation;
use crate::par::map_indexed;
use crate::transport::TriangularMap;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    d: usize,
    n: usize,
    omega: Matrix,
    variance: Option<Matrix>,
}

impl ScoreMatrix {
    /// Builds a score from raw matrices (diagonals are ignored and zeroed).
    pub fn from_parts(n: usize, mut omega: Matrix, variance: Option<Matrix>) -> Result<Self> {
        let d = omega.rows();
        omega.check_symmetric(crate::numerics::SYMMETRY_TOL)?;
        if omega.as_slice().iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidParameter("scores must be finite and non-negative"));
        }
        for i in 0..d {
            omega[(i, i)] = 0.0;
        }
        let variance = match variance {
            Some(mut v) => {
                if v.rows() != d || v.cols() != d {
                    return Err(Error::DimensionMismatch { expected: d, found: v.rows() });
                }
                v.check_symmetric(crate::numerics::SYMMETRY_TOL)?;
                if v.as_slice().iter().any(|x| *x < 0.0 || !x.is_finite()) {
                    return Err(Error::InvalidParameter("variances must be finite and non-negative"));
                }
                for i in 0..d {
                    v[(i, i)] = 0.0;
                }
                Some(v)
            }
            None => None,
        };
        Ok(ScoreMatrix { d, n, omega, variance })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn omega(&self) -> &Matrix {
        &self.omega
    }

    pub fn omega_at(&self, i: usize, j: usize) -> f64 {
        self.omega[(i, j)]
    }

    /// The `υ̃ᵢⱼ²` values, once estimated.
    pub fn variance(&self) -> Option<&Matrix> {
        self.variance.as_ref()
    }

    pub fn variance_at(&self, i: usize, j: usize) -> Option<f64> {
        self.variance.as_ref().map(|v| v[(i, j)])
    }
}

fn pairs(d: usize) -> Vec<(usize, usize)> {
    (0..d).flat_map(|i| ((i + 1)..d).map(move |j| (i, j))).collect()
}

fn check_dims(map: &TriangularMap, data: &SampleMatrix) -> Result<()> {
    if map.dimension() != data.d() {
        return Err(Error::DimensionMismatch { expected: map.dimension(), found: data.d() });
    }
    if data.n() == 0 {
        return Err(Error::InsufficientData { needed: 1, found: 0 });
    }
    Ok(())
}

// Mixed second derivatives for every pair at every sample, sample-major.
fn mixed_hessians(map: &TriangularMap, data: &SampleMatrix, pairs: &[(usize, usize)]) -> Vec<Vec<f64>> {
    map_indexed(data.n(), |l| {
        let z = data.row(l);
        let mut out = vec![0.0; pairs.len()];
        for comp in map.components() {
            let k = comp.index();
            // Only pairs whose larger index is ≤ k reach this component.
            if pairs.iter().all(|&(_, j)| j > k) {
                continue;
            }
            let pc = comp.point(z);
            for (p, &(i, j)) in pairs.iter().enumerate() {
                if let Some((a, b)) = comp.pair_locals(i, j) {
                    out[p] += comp.mixed_term(&pc, a, b);
                }
            }
        }
        out
    })
}

fn omega_from(d: usize, pairs: &[(usize, usize)], hs: &[Vec<f64>]) -> Matrix {
    let n = hs.len() as f64;
    let mut omega = Matrix::zeros(d, d);
    for (p, &(i, j)) in pairs.iter().enumerate() {
        let v = hs.iter().map(|h| h[p] * h[p]).sum::<f64>() / n;
        omega[(i, j)] = v;
        omega[(j, i)] = v;
    }
    omega
}

/// `Ω̃` only.
pub fn estimate_score(map: &TriangularMap, data: &SampleMatrix) -> Result<ScoreMatrix> {
    check_dims(map, data)?;
    let ps = pairs(map.dimension());
    let hs = mixed_hessians(map, data, &ps);
    let omega = omega_from(map.dimension(), &ps, &hs);
    if omega.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("score matrix"));
    }
    Ok(ScoreMatrix { d: map.dimension(), n: data.n(), omega, variance: None })
}

// Per component, per pair: the block of ∇_α Ω̃ for that component.
fn gradient_blocks(
    map: &TriangularMap,
    data: &SampleMatrix,
    pairs: &[(usize, usize)],
    hs: &[Vec<f64>],
) -> Vec<Vec<Vec<f64>>> {
    let scale = 2.0 / data.n() as f64;
    map_indexed(map.dimension(), |k| {
        let comp = map.component(k);
        let p = comp.num_coefficients();
        let locals: Vec<_> = pairs.iter().map(|&(i, j)| comp.pair_locals(i, j)).collect();
        let mut grads: Vec<Vec<f64>> =
            locals.iter().map(|l| if l.is_some() { vec![0.0; p] } else { Vec::new() }).collect();
        if locals.iter().all(Option::is_none) {
            return grads;
        }
        for (l, z) in data.rows().enumerate() {
            let pc = comp.point(z);
            for (q, loc) in locals.iter().enumerate() {
                if let Some((a, b)) = *loc {
                    let w = scale * hs[l][q];
                    if w != 0.0 {
                        comp.mixed_term_gradient(&pc, a, b, w, &mut grads[q]);
                    }
                }
            }
        }
        grads
    })
}

/// `∇_α Ω̃ᵢⱼ` in the layout of [`TriangularMap::coefficients`].
pub fn score_gradient(map: &TriangularMap, data: &SampleMatrix, i: usize, j: usize) -> Result<Vec<f64>> {
    check_dims(map, data)?;
    if i == j || i >= map.dimension() || j >= map.dimension() {
        return Err(Error::InvalidParameter("score gradient needs two distinct valid indices"));
    }
    let ps = [(i.min(j), i.max(j))];
    let hs = mixed_hessians(map, data, &ps);
    let blocks = gradient_blocks(map, data, &ps, &hs);
    let mut out = Vec::with_capacity(map.num_coefficients());
    for (k, b) in blocks.into_iter().enumerate() {
        let mut g = b.into_iter().next().unwrap_or_default();
        if g.is_empty() {
            g = vec![0.0; map.component(k).num_coefficients()];
        }
        out.extend(g);
    }
    Ok(out)
}

/// `Ω̃` together with `υ̃ᵢⱼ² = (∇_α Ω̃ᵢⱼ)ᵀ Γ⁻¹ (∇_α Ω̃ᵢⱼ)`.
pub fn estimate_variances(map: &TriangularMap, data: &SampleMatrix, fisher: &FisherInformation) -> Result<ScoreMatrix> {
    check_dims(map, data)?;
    if fisher.dim() != map.num_coefficients() {
        return Err(Error::DimensionMismatch { expected: map.num_coefficients(), found: fisher.dim() });
    }
    let d = map.dimension();
    let ps = pairs(d);
    let hs = mixed_hessians(map, data, &ps);
    let omega = omega_from(d, &ps, &hs);
    let factored = fisher.factor()?;
    let blocks = gradient_blocks(map, data, &ps, &hs);
    let mut variance = Matrix::zeros(d, d);
    for (q, &(i, j)) in ps.iter().enumerate() {
        let mut v = 0.0;
        for (k, comp_blocks) in blocks.iter().enumerate() {
            let g = &comp_blocks[q];
            if !g.is_empty() {
                v += factored.block_quad_form(k, g);
            }
        }
        let v = v.max(0.0);
        variance[(i, j)] = v;
        variance[(j, i)] = v;
    }
    if omega.as_slice().iter().chain(variance.as_slice()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("score or variance"));
    }
    Ok(ScoreMatrix { d, n: data.n(), omega, variance: Some(variance) })
}

/// Score with per-entry thresholds and the retained edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdedScore {
    pub base: ScoreMatrix,
    pub tau: Matrix,
    pub kept: UndirectedGraph,
    pub c: f64,
    pub tau0: f64,
}

/// `τᵢⱼ = τ₀ + c·√(log n)·υ̃ᵢⱼ/√n`.
pub fn threshold_value(n: usize, c: f64, tau0: f64, variance: f64) -> f64 {
    let nf = n as f64;
    tau0 + c * libm::sqrt(libm::log(nf)) * libm::sqrt(variance) / libm::sqrt(nf)
}

/// Retention rule. An exactly zero score is never an edge, even at `τ = 0`.
pub fn is_kept(omega: f64, tau: f64) -> bool {
    omega >= tau && omega > 0.0
}

pub fn threshold(score: &ScoreMatrix, c: f64, tau0: f64) -> Result<ThresholdedScore> {
    let variance = score.variance.as_ref().ok_or(Error::InvalidParameter("threshold needs estimated variances"))?;
    if score.n < 2 {
        return Err(Error::InsufficientData { needed: 2, found: score.n });
    }
    if !(c > 0.0) {
        return Err(Error::InvalidParameter("threshold constant must be positive"));
    }
    if !(tau0 >= 0.0) {
        return Err(Error::InvalidParameter("threshold offset must be non-negative"));
    }
    let d = score.d;
    let mut tau = Matrix::zeros(d, d);
    let mut kept = UndirectedGraph::empty(d);
    for (i, j) in pairs(d) {
        let t = threshold_value(score.n, c, tau0, variance[(i, j)]);
        tau[(i, j)] = t;
        tau[(j, i)] = t;
        if is_kept(score.omega[(i, j)], t) {
            kept.add_edge(i, j)?;
        }
    }
    Ok(ThresholdedScore { base: score.clone(), tau, kept, c, tau0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_difference_gradient, spd_inverse};
    use crate::optimize::{fisher_information, fit_affine_closed_form};
    use crate::transport::SparsityPattern;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_data(cov: &Matrix, n: usize, seed: u64) -> SampleMatrix {
        let l = crate::numerics::cholesky(cov).unwrap();
        let d = cov.rows();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = Vec::with_capacity(n * d);
        for _ in 0..n {
            let e: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            v.extend(l.matvec(&e).unwrap());
        }
        SampleMatrix::new(n, d, v).unwrap()
    }

    #[test]
    fn identity_map_scores_zero() {
        let data = gaussian_data(&Matrix::identity(3), 50, 1);
        let s = estimate_score(&TriangularMap::identity(3).unwrap(), &data).unwrap();
        assert!(s.omega().as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn chain_precision_scores() {
        let prec = Matrix::from_rows(&[[1.0, 0.2, 0.0], [0.2, 1.0, 0.2], [0.0, 0.2, 1.0]]);
        let cov = spd_inverse(&prec).unwrap();
        let map = TriangularMap::from_gaussian(&[0.0; 3], &cov).unwrap();
        let data = gaussian_data(&cov, 100, 2);
        let s = estimate_score(&map, &data).unwrap();
        assert!((s.omega_at(0, 1) - 0.04).abs() < 1e-10);
        assert!(s.omega_at(0, 2).abs() < 1e-20);
    }

    #[test]
    fn correlated_pair_score() {
        let rho: f64 = 0.5;
        let cov = Matrix::from_rows(&[[1.0, rho], [rho, 1.0]]);
        let map = TriangularMap::from_gaussian(&[0.0; 2], &cov).unwrap();
        let data = gaussian_data(&cov, 10, 3);
        let s = estimate_score(&map, &data).unwrap();
        assert!((s.omega_at(0, 1) - 4.0 / 9.0).abs() < 1e-10);
    }

    #[test]
    fn threshold_arithmetic() {
        let n = 3; // log 3 ≈ 1.0986
        let e = core::f64::consts::E;
        assert!((threshold_value(1, 1.0, 0.0, 0.0)).abs() < 1e-15);
        // the e example: log n = 1, υ = 1, so τ = 1/√e
        let tau = 0.0 + 1.0 * libm::sqrt(libm::log(e)) * 1.0 / libm::sqrt(e);
        assert!((tau - 0.6065306597).abs() < 1e-9);
        let omega = Matrix::zeros(2, 2);
        let var = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
        let s = ScoreMatrix::from_parts(n, omega, Some(var)).unwrap();
        let t = threshold(&s, 1.0, 0.0).unwrap();
        assert_eq!(t.kept.num_edges(), 0);
        let expect = (3f64.ln()).sqrt() / 3f64.sqrt();
        assert!((t.tau[(0, 1)] - expect).abs() < 1e-15);
    }

    #[test]
    fn scalar_variance_example() {
        // Γ = 2 and a unit gradient give υ² = 1/2.
        let f = FisherInformation::from_blocks(vec![Matrix::from_rows(&[[2.0]])]).unwrap();
        let fac = f.factor().unwrap();
        assert!((fac.quad_form(&[1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(fac.quad_form(&[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn variances_on_gaussian_fit() {
        let prec = Matrix::from_rows(&[[1.0, 0.2, 0.0], [0.2, 1.0, 0.2], [0.0, 0.2, 1.0]]);
        let cov = spd_inverse(&prec).unwrap();
        let data = gaussian_data(&cov, 2000, 4);
        let fit = fit_affine_closed_form(&data).unwrap();
        let fisher = fisher_information(&fit.map, &data).unwrap();
        let s = estimate_variances(&fit.map, &data, &fisher).unwrap();
        let v = s.variance().unwrap();
        assert!(v[(0, 1)] > 0.0 && v[(0, 1)].is_finite());
        let t = threshold(&s, 1.0, 0.0).unwrap();
        assert!(t.kept.has_edge(0, 1) && t.kept.has_edge(1, 2));
        assert_eq!(t.kept.num_edges(), 2);
    }

    #[test]
    fn score_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data = gaussian_data(&Matrix::identity(3), 15, 9);
        let mut map = TriangularMap::new(&SparsityPattern::dense(3), 2, 32).unwrap();
        let alpha: Vec<f64> = map.coefficients().iter().map(|v| v + rng.random_range(-0.4..0.4)).collect();
        map.set_coefficients(&alpha).unwrap();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let an = score_gradient(&map, &data, i, j).unwrap();
            let fd = finite_difference_gradient(
                |a| {
                    let mut m = map.clone();
                    m.set_coefficients(a).unwrap();
                    estimate_score(&m, &data).unwrap().omega_at(i, j)
                },
                &alpha,
                1e-6,
            );
            for (x, y) in an.iter().zip(&fd) {
                assert!((x - y).abs() <= 1e-4 * x.abs().max(y.abs()) + 1e-7, "({i},{j}) {x} vs {y}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn threshold_is_monotone(omega in prop::collection::vec(0.0f64..0.2, 6), var in prop::collection::vec(0.0f64..2.0, 6),
                                 n in 2usize..100_000, c1 in 0.1f64..3.0, dc in 0.0f64..2.0, t1 in 0.0f64..0.1, dt in 0.0f64..0.1) {
            let mut om = Matrix::zeros(4, 4);
            let mut va = Matrix::zeros(4, 4);
            for (q, (i, j)) in pairs(4).into_iter().enumerate() {
                om[(i, j)] = omega[q]; om[(j, i)] = omega[q];
                va[(i, j)] = var[q]; va[(j, i)] = var[q];
            }
            let s = ScoreMatrix::from_parts(n, om, Some(va)).unwrap();
            let base = threshold(&s, c1, t1).unwrap();
            let higher_c = threshold(&s, c1 + dc, t1).unwrap();
            let higher_t = threshold(&s, c1, t1 + dt).unwrap();
            prop_assert!(higher_c.kept.edges().all(|(i, j)| base.kept.has_edge(i, j)));
            prop_assert!(higher_t.kept.edges().all(|(i, j)| base.kept.has_edge(i, j)));
            for (i, j) in pairs(4) {
                prop_assert_eq!(base.kept.has_edge(i, j), is_kept(base.base.omega_at(i, j), base.tau[(i, j)]));
            }
        }

        #[test]
        fn score_ignores_sample_order(seed in 0u64..100) {
            let data = gaussian_data(&Matrix::identity(3), 12, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let mut map = TriangularMap::new(&SparsityPattern::dense(3), 2, 32).unwrap();
            let alpha: Vec<f64> = map.coefficients().iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
            map.set_coefficients(&alpha).unwrap();
            let rows: Vec<Vec<f64>> = (0..data.n()).rev().map(|l| data.row(l).to_vec()).collect();
            let reversed = SampleMatrix::from_rows(&rows).unwrap();
            let a = estimate_score(&map, &data).unwrap();
            let b = estimate_score(&map, &reversed).unwrap();
            prop_assert!(a.omega().max_abs_diff(b.omega()) <= 1e-12 * a.omega().frobenius_norm().max(1.0));
        }
    }
}
