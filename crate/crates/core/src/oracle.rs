//! Reference quantities used to check the estimators: exact Gaussian scores,
//! Gaussian log-Sobolev constants, a nested Monte Carlo estimate of
//! conditional mutual information and the score-versus-information bound.

use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datasets::RngStream;
use crate::numerics::{cholesky, largest_eigenvalue, spd_inverse, Matrix, LN_2PI, SYMMETRY_TOL};
use crate::par::map_indexed;
use crate::score::ScoreMatrix;
use crate::{Error, Result};

/// Tolerance of the power iteration behind [`gaussian_log_sobolev_constant`].
pub const EIGEN_TOL: f64 = 1e-10;
const EIGEN_MAX_ITER: usize = 100_000;

/// Proposal standard deviations are the Gaussian-approximation conditional
/// ones times this factor, keeping importance weights bounded in the tails.
pub const PROPOSAL_INFLATION: f64 = 1.25;

/// Pilot draws used to fit the Gaussian approximation of the joint law.
pub const PILOT_SAMPLES: usize = 20_000;

/// Exact score matrix of a Gaussian: squared off-diagonal precision entries.
pub fn gaussian_score(precision: &Matrix) -> Result<ScoreMatrix> {
    precision.check_symmetric(SYMMETRY_TOL)?;
    let d = precision.rows();
    let omega = Matrix::from_row_major(d, d, precision.as_slice().iter().map(|v| v * v).collect())?;
    ScoreMatrix::from_parts(0, omega, None)
}

/// Log-Sobolev constant of `N(μ, Σ)`, the largest eigenvalue of `Σ`.
pub fn gaussian_log_sobolev_constant(covariance: &Matrix) -> Result<f64> {
    cholesky(covariance)?;
    largest_eigenvalue(covariance, EIGEN_TOL, EIGEN_MAX_ITER)
}

/// A joint law that can be sampled exactly and evaluated up to a constant.
pub trait JointDensity {
    fn dim(&self) -> usize;
    /// Log density, possibly unnormalized.
    fn log_density(&self, z: &[f64]) -> f64;
    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;
}

/// `N(mean, covariance)` as a [`JointDensity`].
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDensity {
    mean: Vec<f64>,
    chol: Matrix,
    precision: Matrix,
    log_norm: f64,
}

impl GaussianDensity {
    pub fn new(mean: Vec<f64>, covariance: &Matrix) -> Result<Self> {
        let d = covariance.rows();
        if mean.len() != d {
            return Err(Error::DimensionMismatch { expected: d, found: mean.len() });
        }
        let chol = cholesky(covariance)?;
        let log_det: f64 = (0..d).map(|i| 2.0 * libm::log(chol[(i, i)])).sum();
        let precision = spd_inverse(covariance)?;
        Ok(GaussianDensity { mean, chol, precision, log_norm: -0.5 * (d as f64 * LN_2PI + log_det) })
    }

    /// Unit-variance bivariate law with correlation `rho`.
    pub fn bivariate(rho: f64) -> Result<Self> {
        GaussianDensity::new(alloc::vec![0.0; 2], &Matrix::from_rows(&[[1.0, rho], [rho, 1.0]]))
    }
}

impl JointDensity for GaussianDensity {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, z: &[f64]) -> f64 {
        let d = self.mean.len();
        let r: Vec<f64> = z.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let mut q = 0.0;
        for a in 0..d {
            for b in 0..d {
                q += r[a] * self.precision[(a, b)] * r[b];
            }
        }
        self.log_norm - 0.5 * q
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let d = self.mean.len();
        let y: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        (0..d).map(|a| self.mean[a] + (0..=a).map(|b| self.chol[(a, b)] * y[b]).sum::<f64>()).collect()
    }
}

/// Nested Monte Carlo estimate of `I(Z_i; Z_j | Z_rest)` in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CmiEstimate {
    pub value: f64,
    pub outer_n: usize,
    pub inner_n: usize,
    pub std_error: f64,
}

impl CmiEstimate {
    /// Whether `truth` lies within `k` standard errors of the estimate.
    pub fn agrees_with(&self, truth: f64, k: f64) -> bool {
        libm::fabs(self.value - truth) <= k * self.std_error
    }
}

// Gaussian conditional of the coordinates `free` given all others.
struct Conditional {
    free: Vec<usize>,
    // Cholesky factor of the inflated conditional covariance.
    chol: Matrix,
    log_norm: f64,
    // mean = mu_free + gain · (z_rest − mu_rest)
    gain: Matrix,
    rest: Vec<usize>,
}

impl Conditional {
    fn new(mean: &[f64], precision: &Matrix, free: Vec<usize>) -> Result<(Self, Vec<f64>)> {
        let d = mean.len();
        let rest: Vec<usize> = (0..d).filter(|v| !free.contains(v)).collect();
        let k = free.len();
        let paa = Matrix::from_row_major(k, k, free.iter().flat_map(|&a| free.iter().map(move |&b| (a, b))).map(|(a, b)| precision[(a, b)]).collect())?;
        let cov = spd_inverse(&paa)?;
        let s2 = PROPOSAL_INFLATION * PROPOSAL_INFLATION;
        let inflated = Matrix::from_row_major(k, k, cov.as_slice().iter().map(|v| v * s2).collect())?;
        let chol = cholesky(&inflated)?;
        let log_det: f64 = (0..k).map(|i| 2.0 * libm::log(chol[(i, i)])).sum();
        let mut gain = Matrix::zeros(k, rest.len());
        for a in 0..k {
            for (c, &r) in rest.iter().enumerate() {
                gain.as_mut_slice()[a * rest.len() + c] = -(0..k).map(|b| cov[(a, b)] * precision[(free[b], r)]).sum::<f64>();
            }
        }
        let mu_free: Vec<f64> = free.iter().map(|&a| mean[a]).collect();
        let log_norm = -0.5 * (k as f64 * LN_2PI + log_det);
        Ok((Conditional { free, chol, log_norm, gain, rest }, mu_free))
    }

    // log of the IS estimate of ∫ π(z with free coords replaced) d(free).
    fn log_integral<D: JointDensity + ?Sized>(
        &self,
        density: &D,
        z: &[f64],
        mean: &[f64],
        mu_free: &[f64],
        m: usize,
        rng: &mut ChaCha8Rng,
    ) -> f64 {
        let k = self.free.len();
        let centre: Vec<f64> = (0..k)
            .map(|a| {
                mu_free[a] + self.rest.iter().enumerate().map(|(c, &r)| self.gain[(a, c)] * (z[r] - mean[r])).sum::<f64>()
            })
            .collect();
        let mut point = z.to_vec();
        let mut logs = Vec::with_capacity(m);
        let mut y = alloc::vec![0.0; k];
        for _ in 0..m {
            y.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            for a in 0..k {
                point[self.free[a]] = centre[a] + (0..=a).map(|b| self.chol[(a, b)] * y[b]).sum::<f64>();
            }
            let log_q = self.log_norm - 0.5 * y.iter().map(|v| v * v).sum::<f64>();
            logs.push(density.log_density(&point) - log_q);
        }
        log_mean_exp(&logs)
    }
}

fn log_mean_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + libm::log(v.iter().map(|x| libm::exp(x - max)).sum::<f64>() / v.len() as f64)
}

/// Nested Monte Carlo estimate of the conditional mutual information between
/// coordinates `i` and `j`.
///
/// Each outer draw `z ~ π` contributes
/// `log π(z) − log ∫π dz_j − log ∫π dz_i + log ∬π dz_i dz_j`, where the inner
/// integrals are importance-sampling estimates with `inner_n` draws from the
/// Gaussian-approximation conditional (inflated by [`PROPOSAL_INFLATION`]).
/// Normalizing constants of `π` cancel.
pub fn nested_mc_cmi<D: JointDensity + Sync + ?Sized>(
    density: &D,
    i: usize,
    j: usize,
    outer_n: usize,
    inner_n: usize,
    rng: &RngStream,
) -> Result<CmiEstimate> {
    let d = density.dim();
    if i >= d || j >= d || i == j {
        return Err(Error::InvalidParameter("cmi needs two distinct coordinates in range"));
    }
    if outer_n < 2 || inner_n < 1 {
        return Err(Error::InsufficientData { needed: 2, found: outer_n.min(inner_n) });
    }
    let (mean, precision) = pilot_moments(density, &rng.substream(u64::MAX))?;
    let (drop_j, mu_j) = Conditional::new(&mean, &precision, alloc::vec![j])?;
    let (drop_i, mu_i) = Conditional::new(&mean, &precision, alloc::vec![i])?;
    let (drop_ij, mu_ij) = Conditional::new(&mean, &precision, alloc::vec![i, j])?;
    let terms = map_indexed(outer_n, |l| {
        let mut g = rng.substream(l as u64).rng();
        let z = density.sample(&mut g);
        density.log_density(&z) - drop_j.log_integral(density, &z, &mean, &mu_j, inner_n, &mut g)
            - drop_i.log_integral(density, &z, &mean, &mu_i, inner_n, &mut g)
            + drop_ij.log_integral(density, &z, &mean, &mu_ij, inner_n, &mut g)
    });
    if terms.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("nested Monte Carlo term"));
    }
    let n = outer_n as f64;
    let value = terms.iter().sum::<f64>() / n;
    let var = terms.iter().map(|t| (t - value) * (t - value)).sum::<f64>() / (n - 1.0);
    Ok(CmiEstimate { value, outer_n, inner_n, std_error: libm::sqrt(var / n) })
}

fn pilot_moments<D: JointDensity + ?Sized>(density: &D, rng: &RngStream) -> Result<(Vec<f64>, Matrix)> {
    let d = density.dim();
    let mut g = rng.rng();
    let draws: Vec<Vec<f64>> = (0..PILOT_SAMPLES).map(|_| density.sample(&mut g)).collect();
    let n = PILOT_SAMPLES as f64;
    let mean: Vec<f64> = (0..d).map(|a| draws.iter().map(|z| z[a]).sum::<f64>() / n).collect();
    let mut cov = Matrix::zeros(d, d);
    for z in &draws {
        for a in 0..d {
            for b in 0..d {
                cov.as_mut_slice()[a * d + b] += (z[a] - mean[a]) * (z[b] - mean[b]) / n;
            }
        }
    }
    Ok((mean, spd_inverse(&cov)?))
}

/// Both sides of the information bound `I ≤ C₀²·Ω₁₂` for a unit-variance
/// bivariate Gaussian with correlation `rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub rho: f64,
    pub cmi: f64,
    pub log_sobolev: f64,
    pub score: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Evaluates the bound analytically; `holds` is `cmi ≤ bound`.
pub fn check_theorem1_bound(rho: f64) -> Result<BoundCheck> {
    if !(libm::fabs(rho) < 1.0) {
        return Err(Error::InvalidParameter("correlation must satisfy |rho| < 1"));
    }
    let cov = Matrix::from_rows(&[[1.0, rho], [rho, 1.0]]);
    let cmi = -0.5 * libm::log(1.0 - rho * rho);
    let log_sobolev = gaussian_log_sobolev_constant(&cov)?;
    let score = gaussian_score(&spd_inverse(&cov)?)?.omega_at(0, 1);
    let bound = log_sobolev * log_sobolev * score;
    // Rounding can put the two sides a few ulps apart when both vanish.
    let holds = cmi <= bound + 1e-15;
    Ok(BoundCheck { rho, cmi, log_sobolev, score, bound, holds })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_score_examples() {
        let p = Matrix::from_rows(&[[1.0, 0.2, 0.0], [0.2, 1.0, 0.2], [0.0, 0.2, 1.0]]);
        let s = gaussian_score(&p).unwrap();
        assert!((s.omega_at(0, 1) - 0.04).abs() < 1e-15);
        assert_eq!(s.omega_at(0, 2), 0.0);
        assert_eq!(s.omega_at(1, 1), 0.0);
        let id = gaussian_score(&Matrix::identity(4)).unwrap();
        assert!(id.omega().as_slice().iter().all(|v| *v == 0.0));
        let rho: f64 = 0.5;
        let prec = spd_inverse(&Matrix::from_rows(&[[1.0, rho], [rho, 1.0]])).unwrap();
        assert!((prec[(0, 1)] + 2.0 / 3.0).abs() < 1e-14);
        assert!((gaussian_score(&prec).unwrap().omega_at(0, 1) - 4.0 / 9.0).abs() < 1e-14);
        assert!(gaussian_score(&Matrix::from_rows(&[[1.0, 0.1], [0.2, 1.0]])).is_err());
    }

    #[test]
    fn log_sobolev_examples() {
        assert!((gaussian_log_sobolev_constant(&Matrix::identity(3)).unwrap() - 1.0).abs() < 1e-9);
        let c = gaussian_log_sobolev_constant(&Matrix::from_rows(&[[1.0, 0.5], [0.5, 1.0]])).unwrap();
        assert!((c - 1.5).abs() < 1e-8);
        assert!((gaussian_log_sobolev_constant(&Matrix::diagonal(&[2.0, 3.0])).unwrap() - 3.0).abs() < 1e-8);
        assert!(matches!(
            gaussian_log_sobolev_constant(&Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]])),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn gaussian_density_normalized() {
        let g = GaussianDensity::bivariate(0.3).unwrap();
        let expected = -LN_2PI - 0.5 * (1.0f64 - 0.09).ln();
        assert!((g.log_density(&[0.0, 0.0]) - expected).abs() < 1e-14);
    }

    #[test]
    fn bound_examples() {
        let b = check_theorem1_bound(0.5).unwrap();
        assert!((b.cmi - 0.143_841).abs() < 1e-6);
        assert!((b.bound - 1.0).abs() < 1e-8);
        assert!(b.holds);
        let z = check_theorem1_bound(0.0).unwrap();
        assert_eq!(z.cmi, 0.0);
        assert!(z.bound.abs() < 1e-15 && z.holds);
        for k in 1..10 {
            let rho = k as f64 / 10.0;
            let b = check_theorem1_bound(rho).unwrap();
            let r = rho / (1.0 - rho * rho);
            assert!(b.holds);
            assert!(b.bound <= 4.0 * r * r + 1e-12);
        }
        assert!(check_theorem1_bound(1.0).is_err());
    }

    #[test]
    fn nested_mc_small_runs() {
        let g = GaussianDensity::bivariate(0.5).unwrap();
        let est = nested_mc_cmi(&g, 0, 1, 2000, 200, &RngStream::new(1, 0)).unwrap();
        assert!(est.agrees_with(-0.5 * (0.75f64).ln(), 3.0), "{est:?}");
        let ind = GaussianDensity::new(vec![0.0; 3], &Matrix::diagonal(&[1.0, 2.0, 0.5])).unwrap();
        let est = nested_mc_cmi(&ind, 0, 2, 2000, 200, &RngStream::new(2, 0)).unwrap();
        assert!(est.agrees_with(0.0, 3.0), "{est:?}");
        assert!(nested_mc_cmi(&g, 0, 0, 10, 10, &RngStream::new(0, 0)).is_err());
    }
}
