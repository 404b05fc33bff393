//! Maximum-likelihood map fitting, the affine closed form, and the Fisher
//! information of the fitted coefficients.
//!
//! The negative log-likelihood separates over map components, so each
//! component is fitted on its own. Per-sample features that do not depend on
//! the coefficients (basis values and the Gram matrix in `t`) are computed
//! once, after which an objective/gradient evaluation costs `O(n·p)`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::datasets::SampleMatrix;
use crate::numerics::{cholesky, cholesky_solve, dot, lower_triangular_inverse, Matrix, LN_2PI};
use crate::par::map_indexed;
use crate::transport::{sym_matvec, MapComponent, SparsityPattern, TriangularMap, DEFAULT_QUADRATURE_ORDER};
use crate::{Error, Result};

/// Relative ridge added to the Fisher information diagonal.
pub const FISHER_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
    pub quadrature_order: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { gradient_tolerance: 1e-6, max_iterations: 500, quadrature_order: DEFAULT_QUADRATURE_ORDER }
    }
}

/// Outcome of one minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted step, starting with the initial value.
    pub trace: Vec<f64>,
}

/// BFGS on the inverse Hessian with Armijo backtracking.
///
/// `f` returns the objective and writes the gradient into its second argument.
/// Convergence is declared when the gradient's max-norm drops below `tol`.
pub fn bfgs_minimize<F>(mut f: F, x0: &[f64], tol: f64, max_iterations: usize) -> BfgsResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let p = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; p];
    let mut fx = f(&x, &mut g);
    let mut trace = vec![fx];
    let mut hinv = identity_flat(p);
    let mut fresh = true;
    let mut x_new = vec![0.0; p];
    let mut g_new = vec![0.0; p];
    let mut iterations = 0;
    let mut converged = max_norm(&g) < tol;
    while !converged && iterations < max_iterations {
        let mut dir: Vec<f64> = (0..p).map(|i| -dot(&hinv[i * p..(i + 1) * p], &g)).collect();
        let mut slope = dot(&dir, &g);
        if !(slope < 0.0) {
            hinv = identity_flat(p);
            fresh = true;
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..p {
                x_new[i] = x[i] + step * dir[i];
            }
            let f_new = f(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= fx + 1e-4 * step * slope {
                accepted = true;
                fx = f_new;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            if fresh {
                break;
            }
            hinv = identity_flat(p);
            fresh = true;
            continue;
        }
        iterations += 1;
        let s: Vec<f64> = (0..p).map(|i| x_new[i] - x[i]).collect();
        let y: Vec<f64> = (0..p).map(|i| g_new[i] - g[i]).collect();
        core::mem::swap(&mut x, &mut x_new);
        core::mem::swap(&mut g, &mut g_new);
        trace.push(fx);
        let sy = dot(&s, &y);
        if sy > 1e-12 * libm::sqrt(dot(&s, &s) * dot(&y, &y)) {
            if fresh {
                let scale = sy / dot(&y, &y);
                hinv.iter_mut().for_each(|v| *v *= scale);
                fresh = false;
            }
            bfgs_update(&mut hinv, &s, &y, sy);
        }
        converged = max_norm(&g) < tol;
    }
    BfgsResult { gradient_norm: max_norm(&g), x, value: fx, iterations, converged, trace }
}

fn identity_flat(p: usize) -> Vec<f64> {
    let mut m = vec![0.0; p * p];
    for i in 0..p {
        m[i * p + i] = 1.0;
    }
    m
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| libm::fmax(acc, libm::fabs(*x)))
}

// H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let p = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..p).map(|i| dot(&h[i * p..(i + 1) * p], y)).collect();
    let yhy = dot(y, &hy);
    let coef = rho * rho * yhy + rho;
    for i in 0..p {
        for j in 0..p {
            h[i * p + j] += coef * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

// Coefficient-free per-sample quantities for one component, stored flat:
// [c values | A values | M (row-major) | ψ(x) | x].
struct Features {
    nc: usize,
    nh: usize,
    jn: usize,
    stride: usize,
    n: usize,
    data: Vec<f64>,
    tdeg: Vec<usize>,
    epsilon: f64,
}

impl Features {
    fn new(comp: &MapComponent, data: &SampleMatrix) -> Self {
        let (nc, nh, jn) = (comp.num_c(), comp.num_h(), comp.t_len());
        let stride = nc + nh + jn * jn + jn + 1;
        let mut buf = Vec::with_capacity(stride * data.n());
        for z in data.rows() {
            let pc = comp.point(z);
            buf.extend_from_slice(&pc.c_val);
            buf.extend_from_slice(&pc.a_val);
            buf.extend_from_slice(&pc.m);
            buf.extend_from_slice(&pc.psi);
            buf.push(z[comp.index()]);
        }
        Features {
            nc,
            nh,
            jn,
            stride,
            n: data.n(),
            data: buf,
            tdeg: comp.h_tdeg().to_vec(),
            epsilon: comp.epsilon(),
        }
    }

    fn sample(&self, l: usize) -> Sample<'_> {
        let row = &self.data[l * self.stride..(l + 1) * self.stride];
        let (c, rest) = row.split_at(self.nc);
        let (a, rest) = rest.split_at(self.nh);
        let (m, rest) = rest.split_at(self.jn * self.jn);
        let (psi, rest) = rest.split_at(self.jn);
        Sample { c, a, m, psi, x: rest[0] }
    }

    // S, MB, h and G for one sample.
    fn state(&self, s: &Sample<'_>, alpha: &[f64]) -> (f64, Vec<f64>, f64, f64) {
        let (cc, hc) = alpha.split_at(self.nc);
        let mut b = vec![0.0; self.jn];
        for ((&hm, &am), &d) in hc.iter().zip(s.a).zip(&self.tdeg) {
            b[d] += hm * am;
        }
        let mb = sym_matvec(s.m, &b);
        let sv = dot(cc, s.c) + dot(&b, &mb) + self.epsilon * s.x;
        let h = dot(&b, s.psi);
        (sv, mb, h, h * h + self.epsilon)
    }

    /// Average of ½S² − log G, and its gradient.
    fn objective(&self, alpha: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        for l in 0..self.n {
            let smp = self.sample(l);
            let (s, mb, h, g) = self.state(&smp, alpha);
            total += 0.5 * s * s - libm::log(g);
            let (gc, gh) = grad.split_at_mut(self.nc);
            for (o, &v) in gc.iter_mut().zip(smp.c) {
                *o += s * v;
            }
            let coef_h = -2.0 * h / g;
            for (m, o) in gh.iter_mut().enumerate() {
                let j = self.tdeg[m];
                *o += smp.a[m] * (2.0 * s * mb[j] + coef_h * smp.psi[j]);
            }
        }
        let inv = 1.0 / self.n as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        total * inv
    }

    /// Average Hessian of ½S² − log G (upper triangle mirrored).
    fn hessian(&self, alpha: &[f64]) -> Matrix {
        let p = self.nc + self.nh;
        let mut out = Matrix::zeros(p, p);
        let mut v = vec![0.0; p];
        let mut e = vec![0.0; self.nh];
        for l in 0..self.n {
            let smp = self.sample(l);
            let (s, mb, h, g) = self.state(&smp, alpha);
            v[..self.nc].copy_from_slice(smp.c);
            for m in 0..self.nh {
                let j = self.tdeg[m];
                v[self.nc + m] = 2.0 * smp.a[m] * mb[j];
                e[m] = smp.a[m] * smp.psi[j];
            }
            let ee = 4.0 * h * h / (g * g) - 2.0 / g;
            let buf = out.as_mut_slice();
            for r in 0..p {
                let vr = v[r];
                let row = &mut buf[r * p..(r + 1) * p];
                for c in r..p {
                    row[c] += vr * v[c];
                }
            }
            for m in 0..self.nh {
                let r = self.nc + m;
                let jm = self.tdeg[m];
                let am = smp.a[m];
                let row = &mut buf[r * p..(r + 1) * p];
                for q in m..self.nh {
                    let jq = self.tdeg[q];
                    row[self.nc + q] += 2.0 * s * am * smp.a[q] * smp.m[jm * self.jn + jq] + ee * e[m] * e[q];
                }
            }
        }
        let inv = 1.0 / self.n as f64;
        for r in 0..p {
            for c in r..p {
                let val = out[(r, c)] * inv;
                out[(r, c)] = val;
                out[(c, r)] = val;
            }
        }
        out
    }
}

struct Sample<'a> {
    c: &'a [f64],
    a: &'a [f64],
    m: &'a [f64],
    psi: &'a [f64],
    x: f64,
}

/// A fitted component with its diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentFit {
    pub component: MapComponent,
    /// Average negative log-likelihood contribution, including `½ log 2π`.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub underdetermined: bool,
}

/// Fits the coefficients of `initial` (its bases fix the parameterization;
/// its coefficients are the starting point).
pub fn fit_component(initial: MapComponent, data: &SampleMatrix, opts: &FitOptions) -> Result<ComponentFit> {
    if data.d() <= initial.index() {
        return Err(Error::DimensionMismatch { expected: initial.index() + 1, found: data.d() });
    }
    if data.n() == 0 {
        return Err(Error::InsufficientData { needed: 1, found: 0 });
    }
    let p = initial.num_coefficients();
    let underdetermined = data.n() < p;
    if underdetermined {
        log::warn!(
            "component {} is underdetermined: {} samples for {} coefficients",
            initial.index(),
            data.n(),
            p
        );
    }
    let feats = Features::new(&initial, data);
    let res = bfgs_minimize(|a, g| feats.objective(a, g), &initial.coefficients(), opts.gradient_tolerance, opts.max_iterations);
    if !res.value.is_finite() {
        return Err(Error::NonFinite("fit objective"));
    }
    if !res.converged {
        log::warn!(
            "component {} stopped after {} iterations with gradient norm {:e}",
            initial.index(),
            res.iterations,
            res.gradient_norm
        );
    }
    let mut component = initial;
    let mut alpha = res.x;
    // The map depends on h only through h², so fix the sign of h.
    let (_, h) = alpha.split_at_mut(component.num_c());
    if h.iter().find(|v| **v != 0.0).is_some_and(|v| *v < 0.0) {
        h.iter_mut().for_each(|v| *v = -*v);
    }
    component.set_coefficient_vector(&alpha)?;
    Ok(ComponentFit {
        component,
        objective: res.value + 0.5 * LN_2PI,
        iterations: res.iterations,
        converged: res.converged,
        underdetermined,
    })
}

/// A fitted map and per-component diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub map: TriangularMap,
    /// Average negative log-likelihood of the data under the pullback.
    pub objective: f64,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
    pub underdetermined: Vec<bool>,
}

/// Fits a total-degree map under `pattern` with default options.
pub fn fit_map(data: &SampleMatrix, pattern: &SparsityPattern, degree: u32) -> Result<FitResult> {
    fit_map_with(data, pattern, degree, &FitOptions::default())
}

pub fn fit_map_with(data: &SampleMatrix, pattern: &SparsityPattern, degree: u32, opts: &FitOptions) -> Result<FitResult> {
    if data.n() < 2 {
        return Err(Error::InsufficientData { needed: 2, found: data.n() });
    }
    if pattern.dimension() != data.d() {
        return Err(Error::DimensionMismatch { expected: data.d(), found: pattern.dimension() });
    }
    let initial = TriangularMap::new(pattern, degree, opts.quadrature_order)?;
    let fits = map_indexed(data.d(), |k| {
        fit_component(initial.component(k).clone(), data, opts)
            .map_err(|e| Error::ComponentFit { component: k, source: alloc::boxed::Box::new(e) })
    });
    let fits = fits.into_iter().collect::<Result<Vec<_>>>()?;
    let objective = fits.iter().map(|f| f.objective).sum();
    let iterations = fits.iter().map(|f| f.iterations).collect();
    let converged = fits.iter().map(|f| f.converged).collect();
    let underdetermined = fits.iter().map(|f| f.underdetermined).collect();
    let map = TriangularMap::from_components(fits.into_iter().map(|f| f.component).collect())?;
    Ok(FitResult { map, objective, iterations, converged, underdetermined })
}

/// Empirical mean and covariance with `1/n` normalization.
pub fn empirical_moments(data: &SampleMatrix) -> (Vec<f64>, Matrix) {
    let (n, d) = (data.n(), data.d());
    let mut mean = vec![0.0; d];
    for row in data.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = Matrix::zeros(d, d);
    for row in data.rows() {
        for i in 0..d {
            let ri = row[i] - mean[i];
            for j in i..d {
                cov[(i, j)] += ri * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / n as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    (mean, cov)
}

/// The MLE among affine maps: `z ↦ L(z − m̂)` with `LᵀL = Σ̂⁻¹`.
pub fn fit_affine_closed_form(data: &SampleMatrix) -> Result<FitResult> {
    let d = data.d();
    if data.n() < d.max(1) {
        return Err(Error::InsufficientData { needed: d.max(1), found: data.n() });
    }
    let (mean, cov) = empirical_moments(data);
    let l = lower_triangular_inverse(&cholesky(&cov)?);
    let map = TriangularMap::from_affine(&l, &mean)?;
    let objective = average_nll(&map, data)?;
    Ok(FitResult { map, objective, iterations: vec![0; d], converged: vec![true; d], underdetermined: vec![false; d] })
}

/// `−(1/n) Σ log S^♯η(z^l)`.
pub fn average_nll(map: &TriangularMap, data: &SampleMatrix) -> Result<f64> {
    let mut acc = 0.0;
    for z in data.rows() {
        acc -= crate::transport::log_pullback(map, z)?;
    }
    Ok(acc / data.n() as f64)
}

/// Fisher information of all map coefficients. It is block diagonal with one
/// block per component, since the log-likelihood separates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherInformation {
    blocks: Vec<Matrix>,
    offsets: Vec<usize>,
    ridge: f64,
}

impl FisherInformation {
    pub fn from_blocks(blocks: Vec<Matrix>) -> Result<Self> {
        let mut offsets = vec![0];
        for b in &blocks {
            if !b.is_square() {
                return Err(Error::DimensionMismatch { expected: b.rows(), found: b.cols() });
            }
            offsets.push(offsets.last().unwrap() + b.rows());
        }
        Ok(FisherInformation { blocks, offsets, ridge: 0.0 })
    }

    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn blocks(&self) -> &[Matrix] {
        &self.blocks
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Ridge already added to the diagonal.
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn trace(&self) -> f64 {
        self.blocks.iter().map(Matrix::trace).sum()
    }

    /// Adds `rel · trace/p` to every diagonal entry.
    pub fn add_relative_ridge(&mut self, rel: f64) {
        let p = self.dim();
        if p == 0 {
            return;
        }
        let r = rel * self.trace() / p as f64;
        for b in &mut self.blocks {
            for i in 0..b.rows() {
                b[(i, i)] += r;
            }
        }
        self.ridge += r;
    }

    pub fn to_dense(&self) -> Matrix {
        let p = self.dim();
        let mut m = Matrix::zeros(p, p);
        for (b, &o) in self.blocks.iter().zip(&self.offsets) {
            for i in 0..b.rows() {
                for j in 0..b.cols() {
                    m[(o + i, o + j)] = b[(i, j)];
                }
            }
        }
        m
    }

    pub fn factor(&self) -> Result<FactoredFisher> {
        let chol = self.blocks.iter().map(cholesky).collect::<Result<Vec<_>>>()?;
        Ok(FactoredFisher { chol, offsets: self.offsets.clone() })
    }
}

/// Cholesky factors of each Fisher block.
#[derive(Debug, Clone)]
pub struct FactoredFisher {
    chol: Vec<Matrix>,
    offsets: Vec<usize>,
}

impl FactoredFisher {
    /// `gᵀ Γ⁻¹ g`.
    pub fn quad_form(&self, g: &[f64]) -> Result<f64> {
        let p = *self.offsets.last().unwrap_or(&0);
        if g.len() != p {
            return Err(Error::DimensionMismatch { expected: p, found: g.len() });
        }
        Ok(self
            .chol
            .iter()
            .enumerate()
            .map(|(k, l)| {
                let gk = &g[self.offsets[k]..self.offsets[k + 1]];
                if gk.iter().all(|v| *v == 0.0) {
                    return 0.0;
                }
                dot(gk, &cholesky_solve(l, gk))
            })
            .sum())
    }

    /// `gᵀ Γ_k⁻¹ g` for one block.
    pub fn block_quad_form(&self, k: usize, gk: &[f64]) -> f64 {
        if gk.iter().all(|v| *v == 0.0) {
            return 0.0;
        }
        dot(gk, &cholesky_solve(&self.chol[k], gk))
    }
}

/// Empirical Fisher information `−(1/n) Σ ∇²_α log S^♯η(z^l)`, ridged by
/// `1e-8 · trace/p`.
pub fn fisher_information(map: &TriangularMap, data: &SampleMatrix) -> Result<FisherInformation> {
    let mut f = fisher_information_unridged(map, data)?;
    f.add_relative_ridge(FISHER_RIDGE);
    Ok(f)
}

/// As [`fisher_information`] without the ridge.
pub fn fisher_information_unridged(map: &TriangularMap, data: &SampleMatrix) -> Result<FisherInformation> {
    if data.d() != map.dimension() {
        return Err(Error::DimensionMismatch { expected: map.dimension(), found: data.d() });
    }
    if data.n() == 0 {
        return Err(Error::InsufficientData { needed: 1, found: 0 });
    }
    let blocks = map_indexed(map.dimension(), |k| {
        let comp = map.component(k);
        Features::new(comp, data).hessian(&comp.coefficients())
    });
    FisherInformation::from_blocks(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_difference_gradient;
    use crate::transport::log_pullback;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_data(n: usize, d: usize, seed: u64, scale: f64) -> SampleMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..n * d).map(|_| { let x: f64 = StandardNormal.sample(&mut rng); scale * x }).collect();
        SampleMatrix::new(n, d, v).unwrap()
    }

    #[test]
    fn bfgs_rosenbrock() {
        let r = bfgs_minimize(
            |x, g| {
                g[0] = -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]);
                g[1] = 200.0 * (x[1] - x[0] * x[0]);
                (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
            },
            &[-1.2, 1.0],
            1e-8,
            1000,
        );
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn standard_normal_fit_is_identity() {
        let data = normal_data(20_000, 1, 1, 1.0);
        let fit = fit_map(&data, &SparsityPattern::dense(1), 1).unwrap();
        assert!(fit.converged[0]);
        let s1 = fit.map.eval(&[1.0]).unwrap()[0] - fit.map.eval(&[0.0]).unwrap()[0];
        assert!((s1 - 1.0).abs() < 0.02, "slope {s1}");
        assert!((fit.objective - 0.5 * (1.0 + LN_2PI)).abs() < 0.02);
    }

    #[test]
    fn scaled_normal_fit_halves() {
        let data = normal_data(20_000, 1, 2, 2.0);
        let fit = fit_map(&data, &SparsityPattern::dense(1), 1).unwrap();
        let s1 = fit.map.eval(&[1.0]).unwrap()[0] - fit.map.eval(&[0.0]).unwrap()[0];
        assert!((s1 - 0.5).abs() < 0.01, "slope {s1}");
    }

    #[test]
    fn single_sample_is_underdetermined() {
        let data = SampleMatrix::new(1, 1, vec![0.3]).unwrap();
        let comp = MapComponent::with_total_degree(0, &[], 2, 32).unwrap();
        assert_eq!(comp.num_coefficients(), 3);
        let fit = fit_component(comp, &data, &FitOptions::default()).unwrap();
        assert!(fit.underdetermined);
    }

    #[test]
    fn closed_form_moments() {
        let data = SampleMatrix::from_rows(&[[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]]).unwrap();
        let fit = fit_affine_closed_form(&data).unwrap();
        let s = fit.map.eval(&[0.5, 3.0]).unwrap();
        assert!((s[0] + 0.5).abs() < 1e-7 && (s[1] - 2.0).abs() < 1e-7);
    }

    #[test]
    fn closed_form_on_standardized_data_is_identity() {
        let data = SampleMatrix::from_rows(&[[1.0, 1.0], [-1.0, 1.0], [1.0, -1.0], [-1.0, -1.0]]).unwrap();
        let fit = fit_affine_closed_form(&data).unwrap();
        for z in [[0.3, -0.2], [2.0, 1.0]] {
            let s = fit.map.eval(&z).unwrap();
            assert!((s[0] - z[0]).abs() < 1e-7 && (s[1] - z[1]).abs() < 1e-7);
        }
    }

    #[test]
    fn iterative_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 500;
        let mut rows = Vec::new();
        for _ in 0..n {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            let c: f64 = StandardNormal.sample(&mut rng);
            rows.push([1.0 + a, 0.5 * a + b, -0.3 * b + 2.0 * c]);
        }
        let data = SampleMatrix::from_rows(&rows).unwrap();
        let it = fit_map(&data, &SparsityPattern::dense(3), 1).unwrap();
        let cf = fit_affine_closed_form(&data).unwrap();
        let (a, b) = (it.map.coefficients(), cf.map.coefficients());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-4, "{x} vs {y}");
        }
        for _ in 0..20 {
            let z: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let d = log_pullback(&it.map, &z).unwrap() - log_pullback(&cf.map, &z).unwrap();
            assert!(d.abs() < 1e-4);
        }
        assert!((it.objective - cf.objective).abs() < 1e-8);
    }

    #[test]
    fn diagonal_pattern_fits_marginals() {
        let data = normal_data(300, 3, 4, 1.0);
        let fit = fit_map(&data, &SparsityPattern::diagonal(3), 2).unwrap();
        for comp in fit.map.components() {
            assert!(comp.inputs().is_empty());
        }
    }

    #[test]
    fn fisher_scalar_example() {
        // S(z) = (h² + ε) z at h = 1: Hessian of ½h⁴z² − log h² is 6z² + 2.
        let data = normal_data(50_000, 1, 5, 1.0);
        let map = TriangularMap::new(&SparsityPattern::dense(1), 1, 32).unwrap();
        let comp = map.component(0);
        let f = fisher_information(&map, &data).unwrap();
        let h_pos = comp.num_c();
        assert!((f.blocks()[0][(h_pos, h_pos)] - 8.0).abs() < 0.1);
    }

    #[test]
    fn fisher_matches_gradient_differences() {
        let data = normal_data(40, 3, 6, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut map = TriangularMap::new(&SparsityPattern::dense(3), 2, 32).unwrap();
        let alpha: Vec<f64> = map.coefficients().iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
        map.set_coefficients(&alpha).unwrap();
        let fisher = fisher_information_unridged(&map, &data).unwrap().to_dense();
        assert!(fisher.check_symmetric(1e-12).is_ok());
        let p = alpha.len();
        let off = map.coefficient_offsets();
        for r in 0..p {
            let row = finite_difference_gradient(
                |a| {
                    let mut m = map.clone();
                    m.set_coefficients(a).unwrap();
                    let mut acc = 0.0;
                    for z in data.rows() {
                        acc -= crate::transport::coeff_gradient_log_pullback(&m, z).unwrap()[r];
                    }
                    acc / data.n() as f64
                },
                &alpha,
                1e-6,
            );
            for c in 0..p {
                let same_block = (0..3).any(|k| off[k] <= r && r < off[k + 1] && off[k] <= c && c < off[k + 1]);
                if !same_block {
                    assert_eq!(fisher[(r, c)], 0.0);
                }
                assert!((fisher[(r, c)] - row[c]).abs() < 1e-5 * (1.0 + row[c].abs()), "({r},{c})");
            }
        }
    }
}
