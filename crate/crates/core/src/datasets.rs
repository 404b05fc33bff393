//! Seeded generators for the benchmark families.
//!
//! Every generator takes an [`RngStream`] and is a pure function of it.
//! Nonparanormal families draw a Gaussian vector and push each coordinate
//! through a strictly increasing map, so the Gaussian's graph carries over.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::graph::UndirectedGraph;
use crate::numerics::{cholesky, gauss_hermite, normal_cdf, spd_inverse, Matrix, QuadratureRule};
use crate::{Error, Result};

/// `n × d` observations stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMatrix {
    n: usize,
    d: usize,
    values: Vec<f64>,
}

impl SampleMatrix {
    pub fn new(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * d {
            return Err(Error::DimensionMismatch { expected: n * d, found: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sample values"));
        }
        Ok(SampleMatrix { n, d, values })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * d);
        for r in rows {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::DimensionMismatch { expected: d, found: r.len() });
            }
            values.extend_from_slice(r);
        }
        SampleMatrix::new(rows.len(), d, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, l: usize) -> &[f64] {
        &self.values[l * self.d..(l + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.d.max(1)).take(self.n)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|l| self.values[l * self.d + j]).collect()
    }

    /// New matrix whose column `p` is column `perm[p]` of `self`.
    pub fn permute_columns(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, found: perm.len() });
        }
        let mut values = Vec::with_capacity(self.values.len());
        for row in self.rows() {
            values.extend(perm.iter().map(|&j| row[j]));
        }
        Ok(SampleMatrix { n: self.n, d: self.d, values })
    }

    /// First `n` rows.
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.n);
        SampleMatrix { n, d: self.d, values: self.values[..n * self.d].to_vec() }
    }
}

/// A reproducible random stream: the same `(seed, stream)` gives the same draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngStream { seed, stream }
    }

    /// A sibling stream with the same seed.
    pub fn substream(&self, stream: u64) -> Self {
        RngStream { seed: self.seed, stream: self.stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream).wrapping_add(1) }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InsufficientData { needed: 1, found: 0 });
    }
    Ok(())
}

/// `r` independent pairs `(P, W·P)` with `P, W ~ N(0, 1)`; columns are
/// `P₁, Q₁, …, P_r, Q_r` and the truth links each pair.
pub fn gen_butterfly(r: usize, n: usize, rng: &RngStream) -> Result<(SampleMatrix, UndirectedGraph)> {
    if r == 0 {
        return Err(Error::InvalidParameter("butterfly needs at least one pair"));
    }
    check_n(n)?;
    let mut g = rng.rng();
    let mut values = Vec::with_capacity(n * 2 * r);
    for _ in 0..n {
        for _ in 0..r {
            let p = standard_normal(&mut g);
            let w = standard_normal(&mut g);
            values.push(p);
            values.push(w * p);
        }
    }
    let truth = UndirectedGraph::from_edges(2 * r, (0..r).map(|i| (2 * i, 2 * i + 1)))?;
    Ok((SampleMatrix::new(n, 2 * r, values)?, truth))
}

/// Unit diagonal with `coupling` between consecutive variables.
pub fn chain_precision(d: usize, coupling: f64) -> Matrix {
    let mut p = Matrix::identity(d);
    for i in 1..d {
        p.as_mut_slice()[i * d + i - 1] = coupling;
        p.as_mut_slice()[(i - 1) * d + i] = coupling;
    }
    p
}

/// `n` draws from `N(0, covariance)`.
pub fn gen_gaussian(covariance: &Matrix, n: usize, rng: &RngStream) -> Result<SampleMatrix> {
    check_n(n)?;
    let l = cholesky(covariance)?;
    let d = covariance.rows();
    let mut g = rng.rng();
    let mut y = alloc::vec![0.0; d];
    let mut values = Vec::with_capacity(n * d);
    for _ in 0..n {
        y.iter_mut().for_each(|v| *v = standard_normal(&mut g));
        for i in 0..d {
            values.push((0..=i).map(|j| l[(i, j)] * y[j]).sum::<f64>());
        }
    }
    SampleMatrix::new(n, d, values)
}

/// Off-diagonal precision entry on every edge of a nonparanormal graph.
pub const NONPARANORMAL_EDGE_WEIGHT: f64 = 0.245;

/// Edge probability for two nodes at squared distance `dist2`, clamped to `[0, 1]`.
pub fn edge_probability(dist2: f64, s: f64) -> f64 {
    let p = libm::exp(-dist2 / (2.0 * s)) / libm::sqrt(2.0 * core::f64::consts::PI);
    p.clamp(0.0, 1.0)
}

/// Random geometric graph on uniform points in the unit square, visiting
/// pairs in lexicographic order and skipping any edge that would push a node
/// past `max_degree`. Returns the graph and its precision matrix.
pub fn gen_nonparanormal_graph(
    d: usize,
    s: f64,
    max_degree: usize,
    rng: &RngStream,
) -> Result<(UndirectedGraph, Matrix)> {
    if d < 2 {
        return Err(Error::InvalidParameter("nonparanormal graph needs d >= 2"));
    }
    if !(s > 0.0) {
        return Err(Error::InvalidParameter("sparsity parameter s must be positive"));
    }
    let mut g = rng.rng();
    let pos: Vec<[f64; 2]> = (0..d).map(|_| [g.random::<f64>(), g.random::<f64>()]).collect();
    let mut graph = UndirectedGraph::empty(d);
    let mut precision = Matrix::identity(d);
    for i in 0..d {
        for j in i + 1..d {
            let (dx, dy) = (pos[i][0] - pos[j][0], pos[i][1] - pos[j][1]);
            let dist2 = dx * dx + dy * dy;
            let u: f64 = g.random();
            if u < edge_probability(dist2, s) && graph.degree(i) < max_degree && graph.degree(j) < max_degree {
                graph.add_edge(i, j)?;
                precision.as_mut_slice()[i * d + j] = NONPARANORMAL_EDGE_WEIGHT;
                precision.as_mut_slice()[j * d + i] = NONPARANORMAL_EDGE_WEIGHT;
            }
        }
    }
    Ok((graph, precision))
}

pub const CDF_MEAN_F0: f64 = 0.05;
pub const CDF_SD_F0: f64 = 0.4;
pub const POWER_EXPONENT: f64 = 3.0;
/// Gauss–Hermite order for the normalizing integrals of the marginal transforms.
pub const TRANSFORM_QUADRATURE_ORDER: usize = 100;

/// Which increasing function shapes the nonparanormal marginals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MarginalKind {
    /// Scaled Gaussian CDF with mean [`CDF_MEAN_F0`] and sd [`CDF_SD_F0`].
    Cdf,
    /// `sign(t)|t|^a`.
    Power { a: f64 },
}

impl MarginalKind {
    fn validate(&self) -> Result<()> {
        match self {
            MarginalKind::Power { a } if !(*a > 0.0) => Err(Error::InvalidParameter("power exponent must be positive")),
            _ => Ok(()),
        }
    }
}

/// `F(x) = σ(f₀(x) − m)/s + μ` with `m` and `s` the mean and standard
/// deviation of `f₀(X)` for `X ~ N(μ, σ²)`, so `F` pushes `N(μ, σ²)` to a
/// law with the same first two moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalTransform {
    pub kind: MarginalKind,
    pub mu: f64,
    pub sigma: f64,
    center: f64,
    scale: f64,
}

impl MarginalTransform {
    /// Uses the given Gauss–Hermite rule for the two normalizing integrals.
    pub fn with_rule(kind: MarginalKind, mu: f64, sigma: f64, rule: &QuadratureRule) -> Result<Self> {
        kind.validate()?;
        if !(sigma > 0.0) {
            return Err(Error::InvalidParameter("marginal scale must be positive"));
        }
        let mut t = MarginalTransform { kind, mu, sigma, center: 0.0, scale: 1.0 };
        t.center = match kind {
            MarginalKind::Cdf => rule.gaussian_expectation(mu, sigma, |x| t.shape(x)),
            MarginalKind::Power { .. } => 0.0,
        };
        let var = rule.gaussian_expectation(mu, sigma, |x| {
            let r = t.shape(x) - t.center;
            r * r
        });
        if !(var > 0.0) {
            return Err(Error::NonFinite("marginal transform normalization"));
        }
        t.scale = libm::sqrt(var);
        Ok(t)
    }

    pub fn new(kind: MarginalKind, mu: f64, sigma: f64) -> Result<Self> {
        MarginalTransform::with_rule(kind, mu, sigma, &gauss_hermite(TRANSFORM_QUADRATURE_ORDER))
    }

    fn shape(&self, x: f64) -> f64 {
        match self.kind {
            MarginalKind::Cdf => normal_cdf((x - CDF_MEAN_F0) / CDF_SD_F0),
            MarginalKind::Power { a } => {
                let t = x - self.mu;
                libm::copysign(libm::pow(libm::fabs(t), a), t)
            }
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        self.sigma * (self.shape(x) - self.center) / self.scale + self.mu
    }
}

/// Inverse CDF transform of one coordinate with `μ = 0`, `σ = √Σ_kk`.
/// Builds the quadrature each call; use [`DiagonalTransform`] for bulk work.
pub fn cdf_transform_inverse(x: f64, sigma_kk: f64) -> Result<f64> {
    Ok(MarginalTransform::new(MarginalKind::Cdf, 0.0, libm::sqrt(sigma_kk))?.apply(x))
}

/// Inverse power transform of one coordinate with `μ = 0`, `σ = √Σ_kk`.
pub fn power_transform_inverse(x: f64, a: f64, sigma_kk: f64) -> Result<f64> {
    Ok(MarginalTransform::new(MarginalKind::Power { a }, 0.0, libm::sqrt(sigma_kk))?.apply(x))
}

/// One cached [`MarginalTransform`] per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalTransform {
    marginals: Vec<MarginalTransform>,
}

impl DiagonalTransform {
    /// `μ_k = 0` and `σ_k = √Σ_kk` for every coordinate.
    pub fn from_covariance(kind: MarginalKind, covariance: &Matrix) -> Result<Self> {
        let rule = gauss_hermite(TRANSFORM_QUADRATURE_ORDER);
        let marginals = (0..covariance.rows())
            .map(|k| MarginalTransform::with_rule(kind, 0.0, libm::sqrt(covariance[(k, k)]), &rule))
            .collect::<Result<Vec<_>>>()?;
        Ok(DiagonalTransform { marginals })
    }

    pub fn uniform(kind: MarginalKind, d: usize, mu: f64, sigma: f64) -> Result<Self> {
        let m = MarginalTransform::new(kind, mu, sigma)?;
        Ok(DiagonalTransform { marginals: alloc::vec![m; d] })
    }

    pub fn marginal(&self, k: usize) -> &MarginalTransform {
        &self.marginals[k]
    }

    pub fn apply(&self, data: &SampleMatrix) -> Result<SampleMatrix> {
        if data.d() != self.marginals.len() {
            return Err(Error::DimensionMismatch { expected: self.marginals.len(), found: data.d() });
        }
        let values = data.rows().flat_map(|row| row.iter().zip(&self.marginals).map(|(x, m)| m.apply(*x))).collect();
        SampleMatrix::new(data.n(), data.d(), values)
    }
}

/// Samples from the nonparanormal law with the given Gaussian precision.
pub fn gen_nonparanormal(
    precision: &Matrix,
    kind: MarginalKind,
    n: usize,
    rng: &RngStream,
) -> Result<SampleMatrix> {
    let cov = spd_inverse(precision)?;
    let x = gen_gaussian(&cov, n, rng)?;
    DiagonalTransform::from_covariance(kind, &cov)?.apply(&x)
}

/// Coupling of the three-variable chain behind the cubic example.
pub const CUBIC_COUPLING: f64 = 0.2;

/// `Cov(x_i³, x_j³) = 9σ_ii σ_jj σ_ij + 6σ_ij³` for centered Gaussian `x`.
pub fn cubic_moment_covariance(sigma: &Matrix) -> Matrix {
    let d = sigma.rows();
    let mut out = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let s = sigma[(i, j)];
            out.as_mut_slice()[i * d + j] = 9.0 * sigma[(i, i)] * sigma[(j, j)] * s + 6.0 * s * s * s;
        }
    }
    out
}

/// Precision of the best Gaussian approximation to the cubed chain.
pub fn cubic_gaussian_precision() -> Result<Matrix> {
    let sigma = spd_inverse(&chain_precision(3, CUBIC_COUPLING))?;
    spd_inverse(&cubic_moment_covariance(&sigma))
}

/// `z = x³` componentwise for `x ~ N(0, Σ)`, `Σ⁻¹` the 3-chain with coupling
/// 0.2. Returns samples, the chain truth and [`cubic_gaussian_precision`].
pub fn gen_cubic(n: usize, rng: &RngStream) -> Result<(SampleMatrix, UndirectedGraph, Matrix)> {
    let sigma = spd_inverse(&chain_precision(3, CUBIC_COUPLING))?;
    let x = gen_gaussian(&sigma, n, rng)?;
    let z = SampleMatrix::new(n, 3, x.values().iter().map(|v| v * v * v).collect())?;
    Ok((z, UndirectedGraph::chain(3), cubic_gaussian_precision()?))
}

pub const STAR_A: f64 = 1.0;
pub const STAR_B: f64 = 1.0;

/// `x = S⁻¹(y)` for `y ~ N(0, I)` and the map `S¹ = a·x₁`,
/// `S^k = x₁² + b + a·x_k`.
pub fn star_base_sample(d: usize, n: usize, a: f64, b: f64, rng: &RngStream) -> Result<SampleMatrix> {
    if d < 2 {
        return Err(Error::InvalidParameter("star target needs d >= 2"));
    }
    if a == 0.0 || !a.is_finite() {
        return Err(Error::InvalidParameter("star scale a must be finite and nonzero"));
    }
    check_n(n)?;
    let mut g = rng.rng();
    let mut values = Vec::with_capacity(n * d);
    for _ in 0..n {
        let x1 = standard_normal(&mut g) / a;
        values.push(x1);
        for _ in 1..d {
            values.push((standard_normal(&mut g) - x1 * x1 - b) / a);
        }
    }
    SampleMatrix::new(n, d, values)
}

/// Star base sample, centered and scaled with its exact moments, then pushed
/// through the CDF marginal transform with `μ = 0`, `σ = 1`.
pub fn gen_star_beta2(d: usize, n: usize, rng: &RngStream) -> Result<(SampleMatrix, UndirectedGraph)> {
    let (a, b) = (STAR_A, STAR_B);
    let x = star_base_sample(d, n, a, b, rng)?;
    let sd1 = 1.0 / libm::fabs(a);
    let mean_k = -(1.0 / (a * a) + b) / a;
    let sd_k = libm::sqrt(1.0 + 2.0 / (a * a * a * a)) / libm::fabs(a);
    let cdf = MarginalTransform::new(MarginalKind::Cdf, 0.0, 1.0)?;
    let values = x
        .rows()
        .flat_map(|row| {
            row.iter().enumerate().map(|(k, v)| {
                let u = if k == 0 { v / sd1 } else { (v - mean_k) / sd_k };
                cdf.apply(u)
            })
        })
        .collect();
    Ok((SampleMatrix::new(n, d, values)?, UndirectedGraph::star(d)))
}

/// Sign of the advection term in the Lorenz-96 right-hand side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Lorenz96Convention {
    /// `(z_{j+1} − z_{j−2})·z_{j−1} − z_j + F`.
    #[default]
    Standard,
    /// `(z_{j+1} + z_{j−2})·z_{j−1} − z_j + F`.
    Plus,
}

pub fn lorenz96_rhs_into(z: &[f64], forcing: f64, convention: Lorenz96Convention, out: &mut [f64]) {
    let d = z.len();
    let sign = match convention {
        Lorenz96Convention::Standard => -1.0,
        Lorenz96Convention::Plus => 1.0,
    };
    for j in 0..d {
        let next = z[(j + 1) % d];
        let prev = z[(j + d - 1) % d];
        let prev2 = z[(j + d - 2) % d];
        out[j] = (next + sign * prev2) * prev - z[j] + forcing;
    }
}

pub fn lorenz96_rhs(z: &[f64], forcing: f64, convention: Lorenz96Convention) -> Result<Vec<f64>> {
    if z.len() < 4 {
        return Err(Error::InvalidParameter("Lorenz-96 needs d >= 4"));
    }
    let mut out = alloc::vec![0.0; z.len()];
    lorenz96_rhs_into(z, forcing, convention, &mut out);
    Ok(out)
}

/// Scratch space for [`rk4_step`].
#[derive(Debug, Clone)]
pub struct Rk4Workspace {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4Workspace {
    pub fn new(d: usize) -> Self {
        let v = alloc::vec![0.0; d];
        Rk4Workspace { k: [v.clone(), v.clone(), v.clone(), v.clone()], tmp: v }
    }
}

/// One classical Runge–Kutta step of `dz/dt = f(z)`, in place.
pub fn rk4_step<F: FnMut(&[f64], &mut [f64])>(mut f: F, z: &mut [f64], dt: f64, ws: &mut Rk4Workspace) {
    let d = z.len();
    let [k1, k2, k3, k4] = &mut ws.k;
    let tmp = &mut ws.tmp;
    f(z, k1);
    for i in 0..d {
        tmp[i] = z[i] + 0.5 * dt * k1[i];
    }
    f(tmp, k2);
    for i in 0..d {
        tmp[i] = z[i] + 0.5 * dt * k2[i];
    }
    f(tmp, k3);
    for i in 0..d {
        tmp[i] = z[i] + dt * k3[i];
    }
    f(tmp, k4);
    for i in 0..d {
        z[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// States beyond this magnitude abort a trajectory.
pub const BLOWUP_THRESHOLD: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Lorenz96Params {
    pub d: usize,
    pub forcing: f64,
    pub dt: f64,
    pub t_end: f64,
    /// Record every `subsample`-th step.
    pub subsample: usize,
    /// Records dropped from the start.
    pub burn_in: usize,
    pub convention: Lorenz96Convention,
}

impl Default for Lorenz96Params {
    fn default() -> Self {
        Lorenz96Params {
            d: 15,
            forcing: 8.0,
            dt: 0.01,
            t_end: 1600.0,
            subsample: 40,
            burn_in: 1000,
            convention: Lorenz96Convention::Standard,
        }
    }
}

impl Lorenz96Params {
    fn steps(&self) -> usize {
        libm::round(self.t_end / self.dt) as usize
    }

    /// Rows left after sub-sampling and burn-in.
    pub fn rows(&self) -> usize {
        (self.steps() / self.subsample.max(1)).saturating_sub(self.burn_in)
    }

    fn validate(&self) -> Result<()> {
        if self.d < 4 {
            return Err(Error::InvalidParameter("Lorenz-96 needs d >= 4"));
        }
        if !(self.dt > 0.0) || !(self.t_end > 0.0) || !self.forcing.is_finite() {
            return Err(Error::InvalidParameter("Lorenz-96 needs positive dt, t_end and finite forcing"));
        }
        if self.subsample == 0 {
            return Err(Error::InvalidParameter("subsample stride must be positive"));
        }
        if self.rows() == 0 {
            return Err(Error::InsufficientData { needed: 1, found: 0 });
        }
        Ok(())
    }
}

/// RK4 trajectory from `z(0) ~ N(0, I)`. The state is recorded after every
/// `subsample` steps (times `subsample·dt, 2·subsample·dt, …, t_end`) and
/// the first `burn_in` records are dropped.
pub fn lorenz96_trajectory(p: &Lorenz96Params, rng: &RngStream) -> Result<SampleMatrix> {
    p.validate()?;
    let mut g = rng.rng();
    let mut z: Vec<f64> = (0..p.d).map(|_| standard_normal(&mut g)).collect();
    let mut ws = Rk4Workspace::new(p.d);
    let rows = p.rows();
    let mut values = Vec::with_capacity(rows * p.d);
    let mut recorded = 0;
    for step in 1..=p.steps() {
        rk4_step(|x, out| lorenz96_rhs_into(x, p.forcing, p.convention, out), &mut z, p.dt, &mut ws);
        if z.iter().any(|v| !(libm::fabs(*v) <= BLOWUP_THRESHOLD)) {
            return Err(Error::NumericalBlowup { step });
        }
        if step % p.subsample == 0 {
            if recorded >= p.burn_in {
                values.extend_from_slice(&z);
            }
            recorded += 1;
        }
    }
    SampleMatrix::new(rows, p.d, values)
}

/// Nodes within circular distance `width` of each other.
pub fn circular_band(d: usize, width: usize) -> UndirectedGraph {
    let mut g = UndirectedGraph::empty(d);
    for i in 0..d {
        for j in i + 1..d {
            if (j - i).min(d - (j - i)) <= width {
                g.add_edge(i, j).expect("indices in range");
            }
        }
    }
    g
}

/// Circular distance of the Lorenz-96 interaction graph (`z_j` couples to
/// `z_{j−2}, z_{j−1}, z_{j+1}`).
pub const LORENZ96_COUPLING_WIDTH: usize = 2;

pub const DEFAULT_NONPARANORMAL_S: f64 = 3.0;
pub const DEFAULT_MAX_DEGREE: usize = 4;

fn default_s() -> f64 {
    DEFAULT_NONPARANORMAL_S
}

fn default_max_degree() -> usize {
    DEFAULT_MAX_DEGREE
}

fn default_power() -> f64 {
    POWER_EXPONENT
}

fn default_coupling() -> f64 {
    CUBIC_COUPLING
}

/// A benchmark family and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum DatasetFamily {
    Butterfly {
        pairs: usize,
    },
    NonparanormalCdf {
        d: usize,
        #[serde(default = "default_s")]
        s: f64,
        #[serde(default = "default_max_degree")]
        max_degree: usize,
    },
    NonparanormalPower {
        d: usize,
        #[serde(default = "default_s")]
        s: f64,
        #[serde(default = "default_max_degree")]
        max_degree: usize,
        #[serde(default = "default_power")]
        a: f64,
    },
    Cubic,
    StarBeta2 {
        d: usize,
    },
    Lorenz96(Lorenz96Params),
    /// Gaussian chain with unit diagonal precision.
    Gaussian {
        d: usize,
        #[serde(default = "default_coupling")]
        coupling: f64,
    },
}

/// A family together with its ground-truth graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(flatten)]
    pub family: DatasetFamily,
    pub truth: UndirectedGraph,
}

/// Generated samples plus everything known about their law.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: SampleMatrix,
    pub spec: DatasetSpec,
    /// Gaussian (or Gaussian-approximation) precision, where one exists.
    pub precision: Option<Matrix>,
}

impl DatasetFamily {
    pub fn dimension(&self) -> usize {
        match self {
            DatasetFamily::Butterfly { pairs } => 2 * pairs,
            DatasetFamily::NonparanormalCdf { d, .. }
            | DatasetFamily::NonparanormalPower { d, .. }
            | DatasetFamily::StarBeta2 { d }
            | DatasetFamily::Gaussian { d, .. } => *d,
            DatasetFamily::Cubic => 3,
            DatasetFamily::Lorenz96(p) => p.d,
        }
    }

    /// Random graph structure (nonparanormal only) comes from `structure`,
    /// observations from `samples`; trials share the former and vary the latter.
    pub fn generate(&self, n: usize, structure: &RngStream, samples: &RngStream) -> Result<Dataset> {
        let (data, truth, precision) = match *self {
            DatasetFamily::Butterfly { pairs } => {
                let (x, t) = gen_butterfly(pairs, n, samples)?;
                (x, t, None)
            }
            DatasetFamily::NonparanormalCdf { d, s, max_degree } => {
                let (t, p) = gen_nonparanormal_graph(d, s, max_degree, structure)?;
                (gen_nonparanormal(&p, MarginalKind::Cdf, n, samples)?, t, Some(p))
            }
            DatasetFamily::NonparanormalPower { d, s, max_degree, a } => {
                let (t, p) = gen_nonparanormal_graph(d, s, max_degree, structure)?;
                (gen_nonparanormal(&p, MarginalKind::Power { a }, n, samples)?, t, Some(p))
            }
            DatasetFamily::Cubic => {
                let (x, t, p) = gen_cubic(n, samples)?;
                (x, t, Some(p))
            }
            DatasetFamily::StarBeta2 { d } => {
                let (x, t) = gen_star_beta2(d, n, samples)?;
                (x, t, None)
            }
            DatasetFamily::Lorenz96(p) => {
                let x = lorenz96_trajectory(&p, samples)?;
                if n > x.n() {
                    return Err(Error::InsufficientData { needed: n, found: x.n() });
                }
                (x.head(n), circular_band(p.d, LORENZ96_COUPLING_WIDTH), None)
            }
            DatasetFamily::Gaussian { d, coupling } => {
                if d < 1 {
                    return Err(Error::InvalidParameter("gaussian needs d >= 1"));
                }
                let p = chain_precision(d, coupling);
                (gen_gaussian(&spd_inverse(&p)?, n, samples)?, UndirectedGraph::chain(d), Some(p))
            }
        };
        Ok(Dataset { samples: data, spec: DatasetSpec { family: self.clone(), truth }, precision })
    }
}
