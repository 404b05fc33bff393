//! Monotone lower-triangular transport maps.
//!
//! Component `k` is `S^k(z) = c(u) + ∫₀^{z_k} (h(u, t)² + ε) dt` with `u` the
//! active inputs before `k`. Both `c` and `h` are tensor Hermite expansions
//! (see [`crate::basis`]). Writing `h(u, t) = Σⱼ Bⱼ(u) ψⱼ(t)` separates the
//! integral: `∫₀^x h² dt = Bᵀ M(x) B` where `M(x)` is a small Gram matrix of
//! the univariate functions in `t`, evaluated once per point by Gauss–Legendre
//! quadrature. Every derivative below differentiates that discretized form,
//! except `∂ₖS^k`, which is `h² + ε` exactly.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::basis::{hermite_function_table, total_degree_set, BasisSet, MultiIndex};
use crate::numerics::{cholesky, gauss_legendre, lower_triangular_inverse, Matrix, QuadratureRule, LN_2PI};
use crate::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_QUADRATURE_ORDER: usize = 32;
/// Bracket expansions allowed per component during inversion.
pub const MAX_BRACKET_DOUBLINGS: usize = 200;

/// Pairs `(j, k)`, `j < k`, whose input `j` is excluded from component `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsityPattern {
    d: usize,
    pairs: BTreeSet<(usize, usize)>,
}

impl SparsityPattern {
    /// No zeros: the dense lower-triangular pattern.
    pub fn dense(d: usize) -> Self {
        SparsityPattern { d, pairs: BTreeSet::new() }
    }

    /// Every off-diagonal dependence removed: a diagonal map.
    pub fn diagonal(d: usize) -> Self {
        let pairs = (0..d).flat_map(|k| (0..k).map(move |j| (j, k))).collect();
        SparsityPattern { d, pairs }
    }

    pub fn from_pairs<I: IntoIterator<Item = (usize, usize)>>(d: usize, pairs: I) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (j, k) in pairs {
            if j >= k || k >= d {
                return Err(Error::InvalidParameter("sparsity pairs need j < k < d"));
            }
            set.insert((j, k));
        }
        Ok(SparsityPattern { d, pairs: set })
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    pub fn contains(&self, j: usize, k: usize) -> bool {
        self.pairs.contains(&(j, k))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairs.iter().copied()
    }

    /// Inputs `j < k` that component `k` may depend on.
    pub fn active_inputs(&self, k: usize) -> Vec<usize> {
        (0..k).filter(|&j| !self.contains(j, k)).collect()
    }
}

// Nonzero-degree factors of a multi-index, as (local variable, degree).
#[derive(Debug, Clone, PartialEq)]
struct Term {
    factors: Vec<(usize, u32)>,
}

impl Term {
    fn from_degrees(degrees: &[u32]) -> Self {
        Term { factors: degrees.iter().enumerate().filter(|(_, &d)| d > 0).map(|(v, &d)| (v, d)).collect() }
    }

    fn has(&self, v: usize) -> bool {
        self.factors.iter().any(|&(w, _)| w == v)
    }

    fn value(&self, tables: &[Vec<[f64; 3]>]) -> f64 {
        self.factors.iter().map(|&(v, d)| tables[v][d as usize][0]).product()
    }

    // Mixed first derivative in each listed variable; zero unless all appear.
    fn derivative(&self, tables: &[Vec<[f64; 3]>], vars: &[usize]) -> f64 {
        if !vars.iter().all(|&v| self.has(v)) {
            return 0.0;
        }
        self.factors
            .iter()
            .map(|&(v, d)| tables[v][d as usize][usize::from(vars.contains(&v))])
            .product()
    }
}

/// Second variable of a mixed derivative inside one component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Second {
    /// Another input before `k` (local index).
    Input(usize),
    /// The component's own variable `z_k`.
    Own,
}

/// One map component `S^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ComponentRecord", into = "ComponentRecord")]
pub struct MapComponent {
    index: usize,
    c_basis: BasisSet,
    h_basis: BasisSet,
    c_coeffs: Vec<f64>,
    h_coeffs: Vec<f64>,
    epsilon: f64,
    quadrature_order: usize,
    // Derived from the fields above.
    quad: QuadratureRule,
    c_terms: Vec<Term>,
    h_terms: Vec<Term>,
    h_tdeg: Vec<usize>,
    t_len: usize,
    table_degree: Vec<usize>,
    c_with: Vec<Vec<usize>>,
    h_with: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct ComponentRecord {
    index: usize,
    c_variables: Vec<usize>,
    c_degree: u32,
    c_indices: Vec<MultiIndex>,
    c_coeffs: Vec<f64>,
    h_variables: Vec<usize>,
    h_degree: u32,
    h_indices: Vec<MultiIndex>,
    h_coeffs: Vec<f64>,
    quadrature_order: usize,
    epsilon: f64,
}

impl From<MapComponent> for ComponentRecord {
    fn from(m: MapComponent) -> Self {
        ComponentRecord {
            index: m.index,
            c_variables: m.c_basis.active_variables,
            c_degree: m.c_basis.max_total_degree,
            c_indices: m.c_basis.indices,
            c_coeffs: m.c_coeffs,
            h_variables: m.h_basis.active_variables,
            h_degree: m.h_basis.max_total_degree,
            h_indices: m.h_basis.indices,
            h_coeffs: m.h_coeffs,
            quadrature_order: m.quadrature_order,
            epsilon: m.epsilon,
        }
    }
}

impl TryFrom<ComponentRecord> for MapComponent {
    type Error = Error;
    fn try_from(r: ComponentRecord) -> Result<Self> {
        let c_basis = BasisSet { active_variables: r.c_variables, indices: r.c_indices, max_total_degree: r.c_degree };
        let h_basis = BasisSet { active_variables: r.h_variables, indices: r.h_indices, max_total_degree: r.h_degree };
        let mut m = MapComponent::new(r.index, c_basis, h_basis, r.quadrature_order, r.epsilon)?;
        m.set_coefficients(&r.c_coeffs, &r.h_coeffs)?;
        Ok(m)
    }
}

/// Per-point quantities of one component that do not depend on which
/// pair of inputs is being differentiated.
pub(crate) struct PointCache {
    x: f64,
    tables: Vec<Vec<[f64; 3]>>,
    pub(crate) c_val: Vec<f64>,
    pub(crate) a_val: Vec<f64>,
    pub(crate) psi: Vec<f64>,
    dpsi: Vec<f64>,
    pub(crate) m: Vec<f64>,
    mb: Vec<f64>,
    b: Vec<f64>,
    pub(crate) s: f64,
    pub(crate) h: f64,
    pub(crate) g: f64,
}

// Pair-specific first and second derivatives of S, h and G.
struct PairParts {
    ba: Vec<f64>,
    bb: Vec<f64>,
    bab: Vec<f64>,
    s_a: f64,
    s_b: f64,
    s_ab: f64,
    h_a: f64,
    h_b: f64,
    h_ab: f64,
    g_a: f64,
    g_b: f64,
    g_ab: f64,
}

impl MapComponent {
    /// Builds a component with `c = 0` and `h ≡ 1`.
    ///
    /// `h_basis` must cover the inputs of `c_basis` plus `index`, with `index` last.
    pub fn new(
        index: usize,
        c_basis: BasisSet,
        h_basis: BasisSet,
        quadrature_order: usize,
        epsilon: f64,
    ) -> Result<Self> {
        if quadrature_order == 0 {
            return Err(Error::InvalidParameter("quadrature order must be at least 1"));
        }
        if !(epsilon > 0.0) {
            return Err(Error::InvalidParameter("epsilon must be positive"));
        }
        if c_basis.active_variables.iter().any(|&v| v >= index) {
            return Err(Error::InvalidParameter("c inputs must precede the component index"));
        }
        let (&last, rest) = h_basis
            .active_variables
            .split_last()
            .ok_or(Error::InvalidParameter("h basis must include the component variable"))?;
        if last != index || rest != c_basis.active_variables.as_slice() {
            return Err(Error::InvalidParameter("h inputs must be the c inputs followed by the component index"));
        }
        let nu = c_basis.num_active();
        if c_basis.indices.iter().any(|i| i.degrees.len() != nu)
            || h_basis.indices.iter().any(|i| i.degrees.len() != nu + 1)
        {
            return Err(Error::InvalidParameter("multi-index length does not match its basis"));
        }
        let c_terms: Vec<Term> = c_basis.indices.iter().map(|i| Term::from_degrees(&i.degrees)).collect();
        let h_terms: Vec<Term> = h_basis.indices.iter().map(|i| Term::from_degrees(&i.degrees[..nu])).collect();
        let h_tdeg: Vec<usize> = h_basis.indices.iter().map(|i| i.degrees[nu] as usize).collect();
        let t_len = h_tdeg.iter().copied().max().unwrap_or(0) + 1;
        let mut table_degree = vec![0usize; nu];
        for t in c_terms.iter().chain(&h_terms) {
            for &(v, d) in &t.factors {
                table_degree[v] = table_degree[v].max(d as usize);
            }
        }
        let with = |terms: &[Term]| -> Vec<Vec<usize>> {
            (0..nu).map(|v| (0..terms.len()).filter(|&m| terms[m].has(v)).collect()).collect()
        };
        let c_with = with(&c_terms);
        let h_with = with(&h_terms);
        let mut h_coeffs = vec![0.0; h_basis.len()];
        if let Some(pos) = h_basis.indices.iter().position(|i| i.is_constant()) {
            h_coeffs[pos] = 1.0;
        }
        Ok(MapComponent {
            index,
            c_coeffs: vec![0.0; c_basis.len()],
            h_coeffs,
            c_basis,
            h_basis,
            epsilon,
            quadrature_order,
            quad: gauss_legendre(quadrature_order).to_unit_interval(),
            c_terms,
            h_terms,
            h_tdeg,
            t_len,
            table_degree,
            c_with,
            h_with,
        })
    }

    /// Total-degree component: `c` of degree `degree` over `inputs`, `h` of
    /// degree `degree − 1` over `inputs` and `index`.
    pub fn with_total_degree(index: usize, inputs: &[usize], degree: u32, quadrature_order: usize) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidParameter("map degree must be at least 1"));
        }
        let c_basis = total_degree_set(inputs, degree);
        let mut h_vars = inputs.to_vec();
        h_vars.push(index);
        let h_basis = total_degree_set(&h_vars, degree - 1);
        MapComponent::new(index, c_basis, h_basis, quadrature_order, DEFAULT_EPSILON)
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn c_basis(&self) -> &BasisSet {
        &self.c_basis
    }

    pub fn h_basis(&self) -> &BasisSet {
        &self.h_basis
    }

    pub fn c_coeffs(&self) -> &[f64] {
        &self.c_coeffs
    }

    pub fn h_coeffs(&self) -> &[f64] {
        &self.h_coeffs
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn quadrature_order(&self) -> usize {
        self.quadrature_order
    }

    /// Inputs before `k` the component depends on.
    pub fn inputs(&self) -> &[usize] {
        &self.c_basis.active_variables
    }

    pub fn num_coefficients(&self) -> usize {
        self.c_coeffs.len() + self.h_coeffs.len()
    }

    pub(crate) fn num_c(&self) -> usize {
        self.c_coeffs.len()
    }

    pub(crate) fn num_h(&self) -> usize {
        self.h_coeffs.len()
    }

    pub(crate) fn t_len(&self) -> usize {
        self.t_len
    }

    pub(crate) fn h_tdeg(&self) -> &[usize] {
        &self.h_tdeg
    }

    pub fn set_coefficients(&mut self, c: &[f64], h: &[f64]) -> Result<()> {
        if c.len() != self.c_coeffs.len() {
            return Err(Error::DimensionMismatch { expected: self.c_coeffs.len(), found: c.len() });
        }
        if h.len() != self.h_coeffs.len() {
            return Err(Error::DimensionMismatch { expected: self.h_coeffs.len(), found: h.len() });
        }
        self.c_coeffs.copy_from_slice(c);
        self.h_coeffs.copy_from_slice(h);
        Ok(())
    }

    /// Coefficients as one vector, `c` first.
    pub fn coefficients(&self) -> Vec<f64> {
        let mut v = self.c_coeffs.clone();
        v.extend_from_slice(&self.h_coeffs);
        v
    }

    pub fn set_coefficient_vector(&mut self, alpha: &[f64]) -> Result<()> {
        let nc = self.c_coeffs.len();
        if alpha.len() != self.num_coefficients() {
            return Err(Error::DimensionMismatch { expected: self.num_coefficients(), found: alpha.len() });
        }
        self.c_coeffs.copy_from_slice(&alpha[..nc]);
        self.h_coeffs.copy_from_slice(&alpha[nc..]);
        Ok(())
    }

    fn local_of(&self, var: usize) -> Option<usize> {
        self.c_basis.active_variables.binary_search(&var).ok()
    }

    /// Maps a global pair `i < j` to local derivative variables, or `None`
    /// when this component does not depend on both.
    pub(crate) fn pair_locals(&self, i: usize, j: usize) -> Option<(usize, Second)> {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        if j > self.index {
            return None;
        }
        let a = self.local_of(i)?;
        if j == self.index {
            Some((a, Second::Own))
        } else {
            Some((a, Second::Input(self.local_of(j)?)))
        }
    }

    /// Fills `out` with `ψⱼ(x)` for `j < t_len`, and returns `M(x)` row-major.
    pub(crate) fn gram(&self, x: f64, psi_out: &mut [f64], dpsi_out: &mut [f64]) -> Vec<f64> {
        let j = self.t_len;
        let table = hermite_function_table(x, j - 1);
        for (r, row) in table.iter().enumerate() {
            psi_out[r] = row[0];
            dpsi_out[r] = row[1];
        }
        let mut m = vec![0.0; j * j];
        if j == 1 {
            m[0] = x;
            return m;
        }
        let mut vals = vec![0.0; j];
        for (&s, &w) in self.quad.nodes.iter().zip(&self.quad.weights) {
            let t = hermite_function_table(x * s, j - 1);
            for r in 0..j {
                vals[r] = t[r][0];
            }
            for r in 0..j {
                let wr = w * vals[r];
                for c in r..j {
                    m[r * j + c] += wr * vals[c];
                }
            }
        }
        for r in 0..j {
            for c in r..j {
                let v = m[r * j + c] * x;
                m[r * j + c] = v;
                m[c * j + r] = v;
            }
        }
        m
    }

    fn tables_for(&self, z: &[f64]) -> Vec<Vec<[f64; 3]>> {
        self.c_basis
            .active_variables
            .iter()
            .zip(&self.table_degree)
            .map(|(&v, &deg)| hermite_function_table(z[v], deg))
            .collect()
    }

    pub(crate) fn point(&self, z: &[f64]) -> PointCache {
        let tables = self.tables_for(z);
        let c_val: Vec<f64> = self.c_terms.iter().map(|t| t.value(&tables)).collect();
        let a_val: Vec<f64> = self.h_terms.iter().map(|t| t.value(&tables)).collect();
        let x = z[self.index];
        let jn = self.t_len;
        let mut psi = vec![0.0; jn];
        let mut dpsi = vec![0.0; jn];
        let m = self.gram(x, &mut psi, &mut dpsi);
        let mut b = vec![0.0; jn];
        for ((&hm, &am), &d) in self.h_coeffs.iter().zip(&a_val).zip(&self.h_tdeg) {
            b[d] += hm * am;
        }
        let mb = sym_matvec(&m, &b);
        let c: f64 = self.c_coeffs.iter().zip(&c_val).map(|(a, b)| a * b).sum();
        let s = c + dot(&b, &mb) + self.epsilon * x;
        let h = dot(&b, &psi);
        PointCache { x, tables, c_val, a_val, psi, dpsi, m, mb, b, s, h, g: h * h + self.epsilon }
    }

    fn b_derivative(&self, tables: &[Vec<[f64; 3]>], vars: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; self.t_len];
        for &m in &self.h_with[vars[0]] {
            let dv = self.h_terms[m].derivative(tables, vars);
            if dv != 0.0 {
                out[self.h_tdeg[m]] += self.h_coeffs[m] * dv;
            }
        }
        out
    }

    fn c_derivative(&self, tables: &[Vec<[f64; 3]>], vars: &[usize]) -> f64 {
        self.c_with[vars[0]]
            .iter()
            .map(|&m| self.c_coeffs[m] * self.c_terms[m].derivative(tables, vars))
            .sum()
    }

    fn pair_parts(&self, pc: &PointCache, a: usize, b: Second) -> PairParts {
        let jn = self.t_len;
        let ba = self.b_derivative(&pc.tables, &[a]);
        let s_a = self.c_derivative(&pc.tables, &[a]) + 2.0 * dot(&ba, &pc.mb);
        let h_a = dot(&ba, &pc.psi);
        let h = pc.h;
        match b {
            Second::Input(bl) => {
                let bb = self.b_derivative(&pc.tables, &[bl]);
                let bab = self.b_derivative(&pc.tables, &[a, bl]);
                let s_b = self.c_derivative(&pc.tables, &[bl]) + 2.0 * dot(&bb, &pc.mb);
                let mbb = sym_matvec(&pc.m, &bb);
                let s_ab =
                    self.c_derivative(&pc.tables, &[a, bl]) + 2.0 * (dot(&bab, &pc.mb) + dot(&ba, &mbb));
                let h_b = dot(&bb, &pc.psi);
                let h_ab = dot(&bab, &pc.psi);
                PairParts {
                    ba,
                    bb,
                    bab,
                    s_a,
                    s_b,
                    s_ab,
                    h_a,
                    h_b,
                    h_ab,
                    g_a: 2.0 * h * h_a,
                    g_b: 2.0 * h * h_b,
                    g_ab: 2.0 * (h_a * h_b + h * h_ab),
                }
            }
            Second::Own => {
                let h_b = dot(&pc.b, &pc.dpsi);
                let h_ab = dot(&ba, &pc.dpsi);
                let g_a = 2.0 * h * h_a;
                PairParts {
                    ba,
                    bb: vec![0.0; jn],
                    bab: vec![0.0; jn],
                    s_a,
                    s_b: pc.g,
                    s_ab: g_a,
                    h_a,
                    h_b,
                    h_ab,
                    g_a,
                    g_b: 2.0 * h * h_b,
                    g_ab: 2.0 * (h_a * h_b + h * h_ab),
                }
            }
        }
    }

    /// This component's contribution to `∂_a∂_b log S^♯η`.
    pub(crate) fn mixed_term(&self, pc: &PointCache, a: usize, b: Second) -> f64 {
        let p = self.pair_parts(pc, a, b);
        let g = pc.g;
        -p.s_a * p.s_b - pc.s * p.s_ab + p.g_ab / g - p.g_a * p.g_b / (g * g)
    }

    /// Adds `weight · ∂(mixed_term)/∂α` to `out` (`c` block then `h` block).
    pub(crate) fn mixed_term_gradient(&self, pc: &PointCache, a: usize, b: Second, weight: f64, out: &mut [f64]) {
        let p = self.pair_parts(pc, a, b);
        let (s, g, h) = (pc.s, pc.g, pc.h);
        let g2 = g * g;
        let own = matches!(b, Second::Own);
        let lam_s = -p.s_ab;
        let lam_a = -p.s_b;
        let (lam_b, lam_ab) = if own { (0.0, 0.0) } else { (-p.s_a, -s) };
        let mut k_g = -p.g_ab / g2 + 2.0 * p.g_a * p.g_b / (g2 * g);
        let mut k_ga = -p.g_b / g2;
        let k_gb = -p.g_a / g2;
        let k_gab = 1.0 / g;
        if own {
            // S_b = G and S_ab = G_a here.
            k_g += -p.s_a;
            k_ga += -s;
        }
        let mu_h = 2.0 * (h * k_g + p.h_a * k_ga + p.h_b * k_gb + p.h_ab * k_gab);
        let mu_a = 2.0 * (h * k_ga + p.h_b * k_gab);
        let mu_b = 2.0 * (h * k_gb + p.h_a * k_gab);
        let mu_ab = 2.0 * h * k_gab;

        let nc = self.c_coeffs.len();
        let (oc, oh) = out.split_at_mut(nc);
        let w = weight;
        for (o, &cv) in oc.iter_mut().zip(&pc.c_val) {
            *o += w * lam_s * cv;
        }
        for &m in &self.c_with[a] {
            let t = &self.c_terms[m];
            let mut v = lam_a * t.derivative(&pc.tables, &[a]);
            if let Second::Input(bl) = b {
                v += lam_ab * t.derivative(&pc.tables, &[a, bl]);
            }
            oc[m] += w * v;
        }
        if let Second::Input(bl) = b {
            for &m in &self.c_with[bl] {
                oc[m] += w * lam_b * self.c_terms[m].derivative(&pc.tables, &[bl]);
            }
        }

        let jn = self.t_len;
        let mba = sym_matvec(&pc.m, &p.ba);
        let (mbb, mbab) = if own {
            (vec![0.0; jn], vec![0.0; jn])
        } else {
            (sym_matvec(&pc.m, &p.bb), sym_matvec(&pc.m, &p.bab))
        };
        // Coefficient of A_m, of ∂_aA_m, of ∂_bA_m and of ∂_a∂_bA_m, per t-degree.
        let mut dense = vec![0.0; jn];
        let mut on_a = vec![0.0; jn];
        let mut on_b = vec![0.0; jn];
        let mut on_ab = vec![0.0; jn];
        for j in 0..jn {
            dense[j] = 2.0 * (lam_s * pc.mb[j] + lam_a * mba[j] + lam_b * mbb[j] + lam_ab * mbab[j])
                + mu_h * pc.psi[j];
            on_a[j] = 2.0 * (lam_a * pc.mb[j] + lam_ab * mbb[j]) + mu_a * pc.psi[j];
            if own {
                dense[j] += mu_b * pc.dpsi[j];
                on_a[j] += mu_ab * pc.dpsi[j];
            } else {
                on_b[j] = 2.0 * (lam_b * pc.mb[j] + lam_ab * mba[j]) + mu_b * pc.psi[j];
                on_ab[j] = 2.0 * lam_ab * pc.mb[j] + mu_ab * pc.psi[j];
            }
        }
        for (m, o) in oh.iter_mut().enumerate() {
            *o += w * pc.a_val[m] * dense[self.h_tdeg[m]];
        }
        for &m in &self.h_with[a] {
            let t = &self.h_terms[m];
            let j = self.h_tdeg[m];
            let mut v = t.derivative(&pc.tables, &[a]) * on_a[j];
            if let Second::Input(bl) = b {
                v += t.derivative(&pc.tables, &[a, bl]) * on_ab[j];
            }
            oh[m] += w * v;
        }
        if let Second::Input(bl) = b {
            for &m in &self.h_with[bl] {
                oh[m] += w * self.h_terms[m].derivative(&pc.tables, &[bl]) * on_b[self.h_tdeg[m]];
            }
        }
    }

    /// `S^k` as a function of `x = z_k` for fixed inputs, via `(c(u), B(u))`.
    fn eval_in_x(&self, c: f64, b: &[f64], x: f64) -> (f64, f64) {
        let jn = self.t_len;
        let mut psi = vec![0.0; jn];
        let mut dpsi = vec![0.0; jn];
        let m = self.gram(x, &mut psi, &mut dpsi);
        let s = c + dot(b, &sym_matvec(&m, b)) + self.epsilon * x;
        let h = dot(b, &psi);
        (s, h * h + self.epsilon)
    }

    fn invert_scalar(&self, z: &[f64], target: f64) -> Result<f64> {
        let pc = self.point(z);
        let c = pc.s - dot(&pc.b, &pc.mb) - self.epsilon * pc.x;
        let f = |x: f64| self.eval_in_x(c, &pc.b, x);
        let tol = 1e-12 * libm::fmax(1.0, libm::fabs(target));
        let (mut lo, mut hi) = (-1.0f64, 1.0f64);
        let mut tries = 0;
        while f(lo).0 > target {
            lo *= 2.0;
            tries += 1;
            if tries > MAX_BRACKET_DOUBLINGS || !lo.is_finite() {
                return Err(Error::NoConvergence { component: self.index });
            }
        }
        tries = 0;
        while f(hi).0 < target {
            hi *= 2.0;
            tries += 1;
            if tries > MAX_BRACKET_DOUBLINGS || !hi.is_finite() {
                return Err(Error::NoConvergence { component: self.index });
            }
        }
        // Safeguarded Newton: fall back to bisection whenever a step leaves the bracket.
        let mut x = 0.5 * (lo + hi);
        for _ in 0..400 {
            let (s, ds) = f(x);
            let r = s - target;
            if libm::fabs(r) <= tol {
                return Ok(x);
            }
            if r > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let newton = x - r / ds;
            x = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if hi - lo <= 4.0 * f64::EPSILON * libm::fmax(1.0, libm::fabs(x)) {
                return Ok(x);
            }
        }
        Ok(x)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sym_matvec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n).map(|r| dot(&m[r * n..(r + 1) * n], v)).collect()
}

/// `S^k(z)`; reads `z[..=k]`.
pub fn eval_component(m: &MapComponent, z: &[f64]) -> f64 {
    m.point(z).s
}

/// `∂ₖS^k(z) = h(z)² + ε`.
pub fn partial_k(m: &MapComponent, z: &[f64]) -> f64 {
    m.point(z).g
}

/// A lower-triangular map with one component per variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangularMap {
    dimension: usize,
    components: Vec<MapComponent>,
    sparsity: SparsityPattern,
    quadrature_order: usize,
    epsilon: f64,
}

impl TriangularMap {
    /// Total-degree map under `pattern`, initialized to `c = 0`, `h ≡ 1`.
    pub fn new(pattern: &SparsityPattern, degree: u32, quadrature_order: usize) -> Result<Self> {
        let d = pattern.dimension();
        if d == 0 {
            return Err(Error::InvalidParameter("map dimension must be positive"));
        }
        let components = (0..d)
            .map(|k| MapComponent::with_total_degree(k, &pattern.active_inputs(k), degree, quadrature_order))
            .collect::<Result<Vec<_>>>()?;
        Ok(TriangularMap {
            dimension: d,
            components,
            sparsity: pattern.clone(),
            quadrature_order,
            epsilon: DEFAULT_EPSILON,
        })
    }

    /// Assembles a map from components; the pattern is read off their inputs.
    pub fn from_components(components: Vec<MapComponent>) -> Result<Self> {
        let d = components.len();
        if d == 0 {
            return Err(Error::InvalidParameter("map dimension must be positive"));
        }
        let mut pairs = Vec::new();
        for (k, c) in components.iter().enumerate() {
            if c.index != k {
                return Err(Error::InvalidParameter("component indices must be 0..d in order"));
            }
            pairs.extend((0..k).filter(|j| c.local_of(*j).is_none()).map(|j| (j, k)));
        }
        let quadrature_order = components[0].quadrature_order;
        let epsilon = components[0].epsilon;
        Ok(TriangularMap {
            dimension: d,
            sparsity: SparsityPattern::from_pairs(d, pairs)?,
            components,
            quadrature_order,
            epsilon,
        })
    }

    /// `S(z) = z` up to rounding.
    pub fn identity(d: usize) -> Result<Self> {
        let mut map = TriangularMap::new(&SparsityPattern::diagonal(d), 1, DEFAULT_QUADRATURE_ORDER)?;
        for comp in &mut map.components {
            comp.h_coeffs[0] = libm::sqrt(1.0 - comp.epsilon);
        }
        Ok(map)
    }

    /// The affine map `z ↦ L(z − mean)` with `L` lower triangular and positive diagonal.
    pub fn from_affine(l: &Matrix, mean: &[f64]) -> Result<Self> {
        let d = mean.len();
        if l.rows() != d || l.cols() != d {
            return Err(Error::DimensionMismatch { expected: d, found: l.rows() });
        }
        let mut map = TriangularMap::new(&SparsityPattern::dense(d), 1, DEFAULT_QUADRATURE_ORDER)?;
        for (k, comp) in map.components.iter_mut().enumerate() {
            let lkk = l[(k, k)];
            if !(lkk > comp.epsilon) {
                return Err(Error::InvalidParameter("affine map needs a positive diagonal"));
            }
            let shift: f64 = (0..=k).map(|j| l[(k, j)] * mean[j]).sum();
            // c basis is [1, z_0, ..., z_{k-1}] in that order for degree one.
            let mut c = vec![0.0; comp.c_coeffs.len()];
            for (idx, mi) in comp.c_basis.indices.iter().enumerate() {
                match mi.degrees.iter().position(|&dg| dg == 1) {
                    None => c[idx] = -shift,
                    Some(v) => c[idx] = l[(k, comp.c_basis.active_variables[v])],
                }
            }
            comp.c_coeffs = c;
            comp.h_coeffs = vec![libm::sqrt(lkk - comp.epsilon)];
        }
        Ok(map)
    }

    /// Affine map whose pullback of the standard Gaussian is `N(mean, cov)`.
    pub fn from_gaussian(mean: &[f64], cov: &Matrix) -> Result<Self> {
        let l = lower_triangular_inverse(&cholesky(cov)?);
        TriangularMap::from_affine(&l, mean)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn components(&self) -> &[MapComponent] {
        &self.components
    }

    pub fn component(&self, k: usize) -> &MapComponent {
        &self.components[k]
    }

    pub fn component_mut(&mut self, k: usize) -> &mut MapComponent {
        &mut self.components[k]
    }

    pub fn sparsity(&self) -> &SparsityPattern {
        &self.sparsity
    }

    pub fn quadrature_order(&self) -> usize {
        self.quadrature_order
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn num_coefficients(&self) -> usize {
        self.components.iter().map(MapComponent::num_coefficients).sum()
    }

    /// Start of each component's block in the global coefficient vector.
    pub fn coefficient_offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.dimension + 1);
        let mut acc = 0;
        off.push(0);
        for c in &self.components {
            acc += c.num_coefficients();
            off.push(acc);
        }
        off
    }

    pub fn coefficients(&self) -> Vec<f64> {
        self.components.iter().flat_map(|c| c.coefficients()).collect()
    }

    pub fn set_coefficients(&mut self, alpha: &[f64]) -> Result<()> {
        if alpha.len() != self.num_coefficients() {
            return Err(Error::DimensionMismatch { expected: self.num_coefficients(), found: alpha.len() });
        }
        let off = self.coefficient_offsets();
        for (k, comp) in self.components.iter_mut().enumerate() {
            comp.set_coefficient_vector(&alpha[off[k]..off[k + 1]])?;
        }
        Ok(())
    }

    fn check_point(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dimension {
            return Err(Error::DimensionMismatch { expected: self.dimension, found: z.len() });
        }
        Ok(())
    }

    pub fn eval(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_point(z)?;
        Ok(self.components.iter().map(|c| eval_component(c, z)).collect())
    }
}

/// Log-density of the pullback of the standard Gaussian through `map`.
pub fn log_pullback(map: &TriangularMap, z: &[f64]) -> Result<f64> {
    map.check_point(z)?;
    let mut acc = -0.5 * map.dimension as f64 * LN_2PI;
    for comp in &map.components {
        let pc = comp.point(z);
        acc += -0.5 * pc.s * pc.s + libm::log(pc.g);
    }
    Ok(acc)
}

/// `∂ᵢ∂ⱼ log S^♯η(z)` for `i ≠ j` (0-based).
pub fn mixed_log_hessian(map: &TriangularMap, z: &[f64], i: usize, j: usize) -> Result<f64> {
    map.check_point(z)?;
    if i == j || i >= map.dimension || j >= map.dimension {
        return Err(Error::InvalidParameter("mixed derivative needs two distinct valid indices"));
    }
    let mut acc = 0.0;
    for comp in &map.components[i.max(j)..] {
        if let Some((a, b)) = comp.pair_locals(i, j) {
            acc += comp.mixed_term(&comp.point(z), a, b);
        }
    }
    Ok(acc)
}

/// Gradient of `log S^♯η(z)` with respect to every coefficient, in the
/// layout of [`TriangularMap::coefficients`].
pub fn coeff_gradient_log_pullback(map: &TriangularMap, z: &[f64]) -> Result<Vec<f64>> {
    map.check_point(z)?;
    let mut out = Vec::with_capacity(map.num_coefficients());
    for comp in &map.components {
        let pc = comp.point(z);
        let mut g = vec![0.0; comp.num_coefficients()];
        objective_gradient_into(comp, &pc, &mut g);
        out.extend(g.into_iter().map(|v| -v));
    }
    Ok(out)
}

// Adds ∂/∂α of ½S² − log G (the per-sample negative log-likelihood term).
pub(crate) fn objective_gradient_into(comp: &MapComponent, pc: &PointCache, out: &mut [f64]) {
    let nc = comp.num_c();
    let (oc, oh) = out.split_at_mut(nc);
    for (o, &v) in oc.iter_mut().zip(&pc.c_val) {
        *o += pc.s * v;
    }
    let coef_h = -2.0 * pc.h / pc.g;
    for (m, o) in oh.iter_mut().enumerate() {
        let j = comp.h_tdeg[m];
        *o += pc.a_val[m] * (2.0 * pc.s * pc.mb[j] + coef_h * pc.psi[j]);
    }
}

/// Solves `S(z) = x` one component at a time.
pub fn invert(map: &TriangularMap, x: &[f64]) -> Result<Vec<f64>> {
    map.check_point(x)?;
    let mut z = vec![0.0; map.dimension];
    for (k, comp) in map.components.iter().enumerate() {
        z[k] = comp.invert_scalar(&z, x[k])?;
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_difference_gradient, spd_inverse};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn univariate(c: &[f64], h: &[f64], degree: u32) -> MapComponent {
        let mut m = MapComponent::with_total_degree(0, &[], degree, DEFAULT_QUADRATURE_ORDER).unwrap();
        m.set_coefficients(c, h).unwrap();
        m
    }

    pub(crate) fn random_map(d: usize, degree: u32, pattern: &SparsityPattern, rng: &mut ChaCha8Rng) -> TriangularMap {
        let _ = d;
        let mut map = TriangularMap::new(pattern, degree, DEFAULT_QUADRATURE_ORDER).unwrap();
        let alpha: Vec<f64> = map.coefficients().iter().map(|v| v + rng.random_range(-0.4..0.4)).collect();
        map.set_coefficients(&alpha).unwrap();
        map
    }

    #[test]
    fn component_examples() {
        let eps = DEFAULT_EPSILON;
        let m = univariate(&[0.0], &[1.0], 1);
        assert!((eval_component(&m, &[2.0]) - 2.0 * (1.0 + eps)).abs() < 1e-14);
        let m = univariate(&[5.0], &[0.0], 1);
        assert!((eval_component(&m, &[3.0]) - (5.0 + 3.0 * eps)).abs() < 1e-14);
        assert!((partial_k(&m, &[0.3]) - eps).abs() < 1e-20);
        // degree two gives h basis {1, t}
        let m = univariate(&[0.0], &[0.0, 1.0], 2);
        assert!((eval_component(&m, &[1.0]) - (1.0 / 3.0 + eps)).abs() < 1e-10);
        let m = univariate(&[0.0], &[2.0], 1);
        assert!((partial_k(&m, &[-0.7]) - (4.0 + eps)).abs() < 1e-14);
    }

    #[test]
    fn identity_log_density() {
        let id1 = TriangularMap::identity(1).unwrap();
        let half_ln_2pi = 0.5 * LN_2PI;
        assert!((log_pullback(&id1, &[0.0]).unwrap() + half_ln_2pi).abs() < 1e-12);
        let id2 = TriangularMap::identity(2).unwrap();
        assert!((log_pullback(&id2, &[1.0, 1.0]).unwrap() - (-1.0 - LN_2PI)).abs() < 1e-12);
        assert_eq!(mixed_log_hessian(&id2, &[0.3, -2.0], 0, 1).unwrap(), 0.0);
    }

    #[test]
    fn affine_gaussian_density() {
        let cov = Matrix::from_rows(&[[2.0, 0.6, 0.1], [0.6, 1.0, -0.3], [0.1, -0.3, 1.5]]);
        let mean = [0.5, -1.0, 2.0];
        let map = TriangularMap::from_gaussian(&mean, &cov).unwrap();
        let prec = spd_inverse(&cov).unwrap();
        let logdet = 2.0 * (0..3).map(|i| cholesky(&cov).unwrap()[(i, i)].ln()).sum::<f64>();
        for z in [[0.0, 0.0, 0.0], [1.0, -2.0, 0.5], [3.0, 1.0, -1.0]] {
            let r: Vec<f64> = z.iter().zip(&mean).map(|(a, b)| a - b).collect();
            let q = crate::numerics::dot(&r, &prec.matvec(&r).unwrap());
            let expect = -0.5 * q - 0.5 * logdet - 1.5 * LN_2PI;
            assert!((log_pullback(&map, &z).unwrap() - expect).abs() < 1e-8);
        }
    }

    #[test]
    fn affine_mixed_hessian_is_negative_precision() {
        let prec = Matrix::from_rows(&[[1.0, 0.2], [0.2, 1.0]]);
        let cov = spd_inverse(&prec).unwrap();
        let map = TriangularMap::from_gaussian(&[0.0, 0.0], &cov).unwrap();
        for z in [[0.0, 0.0], [1.5, -0.7], [-3.0, 2.0]] {
            assert!((mixed_log_hessian(&map, &z, 0, 1).unwrap() + 0.2).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_c_gradient_is_minus_s() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let map = random_map(3, 2, &SparsityPattern::dense(3), &mut rng);
        let z = [0.3, -0.8, 1.1];
        let g = coeff_gradient_log_pullback(&map, &z).unwrap();
        let off = map.coefficient_offsets();
        for k in 0..3 {
            let pos = map.component(k).c_basis().indices.iter().position(|i| i.is_constant()).unwrap();
            assert!((g[off[k] + pos] + eval_component(map.component(k), &z)).abs() < 1e-12);
        }
    }

    #[test]
    fn scaling_inverse() {
        let m = univariate(&[0.0], &[(2.0f64 - DEFAULT_EPSILON).sqrt()], 1);
        let map = TriangularMap::from_components(vec![m]).unwrap();
        assert!((invert(&map, &[4.0]).unwrap()[0] - 2.0).abs() < 1e-12);
        let id = TriangularMap::identity(3).unwrap();
        let x = [0.4, -1.2, 7.0];
        let z = invert(&id, &x).unwrap();
        for (a, b) in z.iter().zip(&x) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn sparsity_removes_inputs() {
        let pattern = SparsityPattern::from_pairs(3, [(0, 2)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let map = random_map(3, 3, &pattern, &mut rng);
        assert_eq!(map.component(2).inputs(), &[1]);
        let z = [0.2, 0.5, -0.4];
        let comp = map.component(2);
        let g = finite_difference_gradient(|p| eval_component(comp, p), &z, 1e-4);
        assert_eq!(g[0], 0.0);
        assert_eq!(map.sparsity(), &pattern);
    }

    #[test]
    fn serde_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let map = random_map(3, 2, &SparsityPattern::from_pairs(3, [(0, 2)]).unwrap(), &mut rng);
        let json = serde_json::to_string(&map).unwrap();
        let back: TriangularMap = serde_json::from_str(&json).unwrap();
        assert_eq!(back, map);
    }

    fn fd_mixed(map: &TriangularMap, z: &[f64], i: usize, j: usize, h: f64) -> f64 {
        let f = |p: &[f64]| log_pullback(map, p).unwrap();
        let mut zp = z.to_vec();
        let mut eval = |di: f64, dj: f64| {
            zp[i] = z[i] + di;
            zp[j] = z[j] + dj;
            f(&zp)
        };
        (eval(h, h) - eval(h, -h) - eval(-h, h) + eval(-h, -h)) / (4.0 * h * h)
    }

    fn close(a: f64, b: f64, rtol: f64, atol: f64) -> bool {
        (a - b).abs() <= rtol * a.abs().max(b.abs()) + atol
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn partial_k_is_positive(seed in 0u64..1000, degree in 1u32..=3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let map = random_map(3, degree, &SparsityPattern::dense(3), &mut rng);
            for _ in 0..20 {
                let z: Vec<f64> = (0..3).map(|_| rng.random_range(-4.0..4.0)).collect();
                for comp in map.components() {
                    prop_assert!(partial_k(comp, &z) > 0.0);
                }
            }
        }

        #[test]
        fn inversion_round_trip(seed in 0u64..1000, degree in 1u32..=3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let map = random_map(3, degree, &SparsityPattern::dense(3), &mut rng);
            let z: Vec<f64> = (0..3).map(|_| rng.random_range(-2.5..2.5)).collect();
            let x = map.eval(&z).unwrap();
            let back = invert(&map, &x).unwrap();
            let again = map.eval(&back).unwrap();
            for k in 0..3 {
                prop_assert!((back[k] - z[k]).abs() < 1e-8, "{:?} vs {:?}", back, z);
                prop_assert!((again[k] - x[k]).abs() < 1e-10);
            }
        }

        #[test]
        fn mixed_hessian_matches_finite_differences(seed in 0u64..1000, degree in 1u32..=3, d in 2usize..=4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let map = random_map(d, degree, &SparsityPattern::dense(d), &mut rng);
            let z: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
            for i in 0..d {
                for j in (i + 1)..d {
                    let an = mixed_log_hessian(&map, &z, i, j).unwrap();
                    let fd = fd_mixed(&map, &z, i, j, 1e-4);
                    prop_assert!(close(an, fd, 1e-4, 1e-5), "({i},{j}) analytic {an} fd {fd}");
                }
            }
        }

        #[test]
        fn coefficient_gradient_matches_finite_differences(seed in 0u64..1000, degree in 1u32..=3, d in 2usize..=4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let map = random_map(d, degree, &SparsityPattern::dense(d), &mut rng);
            let z: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
            let an = coeff_gradient_log_pullback(&map, &z).unwrap();
            let alpha = map.coefficients();
            let fd = finite_difference_gradient(|a| {
                let mut m = map.clone();
                m.set_coefficients(a).unwrap();
                log_pullback(&m, &z).unwrap()
            }, &alpha, 1e-6);
            for (a, f) in an.iter().zip(&fd) {
                prop_assert!(close(*a, *f, 1e-5, 1e-7), "analytic {a} fd {f}");
            }
        }

        #[test]
        fn mixed_term_gradient_matches_finite_differences(seed in 0u64..1000, degree in 1u32..=3, d in 2usize..=4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let map = random_map(d, degree, &SparsityPattern::dense(d), &mut rng);
            let z: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
            let k = d - 1;
            let comp = map.component(k).clone();
            for i in 0..k {
                for j in (i + 1)..=k {
                    let (a, b) = comp.pair_locals(i, j).unwrap();
                    let mut an = vec![0.0; comp.num_coefficients()];
                    comp.mixed_term_gradient(&comp.point(&z), a, b, 1.0, &mut an);
                    let fd = finite_difference_gradient(|alpha| {
                        let mut c = comp.clone();
                        c.set_coefficient_vector(alpha).unwrap();
                        c.mixed_term(&c.point(&z), a, b)
                    }, &comp.coefficients(), 1e-6);
                    for (x, y) in an.iter().zip(&fd) {
                        prop_assert!(close(*x, *y, 1e-5, 1e-6), "({i},{j}) analytic {x} fd {y}");
                    }
                }
            }
        }
    }
}
