//! Symmetric tensor fields and the magnetic potential/divergence operators.
//!
//! A rank-`m` symmetric covariant tensor is stored as `m + 1` grids; component
//! `k` is the value at any index tuple with `m - k` ones and `k` twos. The
//! pointwise inner product is
//! `<S, T>_g = e^{-2 m phi} sum_k C(m, k) S_k T_k`, integrated against
//! `dVol_g = e^{2 phi} dx dy`. Symmetrization averages over permutations.
//!
//! `D_mu` acts on pairs `[xi, eta]` of ranks `(r, r - 1)`:
//!
//! ```text
//! D_mu [xi, eta] = [D xi + (r - 1) S(Y(eta) (x) g),  D eta + r Y(xi)]
//! ```
//!
//! These coefficients are the ones for which `F (pi_r^* xi + pi_{r-1}^* eta)`
//! equals `pi_{r+1}^* p + pi_r^* q` for `[p, q] = D_mu [xi, eta]`. For data of
//! ranks `(m, m - 1)` the adjoint is
//!
//! ```text
//! D_mu^* [p, q] = [-tr grad p - (m - 1) Y(q),  -tr grad q - m tr Y(p)]
//! ```

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use crate::error::{MagrayError, Result};
use crate::geometry::{ConformalSurface, ForceField};
use crate::spectral::SpectralField;

pub fn binom(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[inline]
fn gamma_val(k: usize, i: usize, j: usize, d: [f64; 2]) -> f64 {
    let mut v = 0.0;
    if i == k {
        v += d[j];
    }
    if j == k {
        v += d[i];
    }
    if i == j {
        v -= d[k];
    }
    v
}

/// Index tuple with `m - k` zeros followed by `k` ones.
fn representative(m: usize, k: usize) -> Vec<usize> {
    let mut t = vec![0; m - k];
    t.extend(std::iter::repeat_n(1, k));
    t
}

fn count_ones(t: &[usize]) -> usize {
    t.iter().filter(|&&i| i == 1).count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymTensorField {
    pub rank: usize,
    pub comps: Vec<Vec<f64>>,
}

impl SymTensorField {
    pub fn zeros(surface: &ConformalSurface, rank: usize) -> Self {
        Self { rank, comps: vec![vec![0.0; surface.grid.len()]; rank + 1] }
    }

    pub fn from_comps(rank: usize, comps: Vec<Vec<f64>>) -> Result<Self> {
        if comps.len() != rank + 1 {
            return Err(MagrayError::Rank(format!(
                "rank {rank} tensor needs {} components, got {}",
                rank + 1,
                comps.len()
            )));
        }
        if comps.windows(2).any(|w| w[0].len() != w[1].len()) {
            return Err(MagrayError::Domain("component grids differ in size".into()));
        }
        Ok(Self { rank, comps })
    }

    pub fn scalar(values: Vec<f64>) -> Self {
        Self { rank: 0, comps: vec![values] }
    }

    pub fn constant(surface: &ConformalSurface, c: f64) -> Self {
        Self::scalar(vec![c; surface.grid.len()])
    }

    /// The metric tensor `g`.
    pub fn metric(surface: &ConformalSurface) -> Self {
        let z = vec![0.0; surface.grid.len()];
        Self { rank: 2, comps: vec![surface.e2phi.clone(), z, surface.e2phi.clone()] }
    }

    /// Random components with Fourier modes `|n| <= kmax`.
    pub fn random<R: Rng + ?Sized>(surface: &ConformalSurface, rank: usize, kmax: i64, rng: &mut R) -> Self {
        let comps = (0..=rank)
            .map(|_| SpectralField::random_real(surface.lx(), surface.ly(), kmax, 1.0, rng).to_grid(&surface.grid))
            .collect();
        Self { rank, comps }
    }

    pub fn len(&self) -> usize {
        self.comps[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Value at the index tuple `t` (entries 0 or 1) and grid point `n`.
    #[inline]
    pub fn at(&self, t: &[usize], n: usize) -> f64 {
        self.comps[count_ones(t)][n]
    }

    pub fn scale(&mut self, s: f64) {
        for c in &mut self.comps {
            for v in c.iter_mut() {
                *v *= s;
            }
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.scale(s);
        out
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &Self) {
        assert_eq!(self.rank, other.rank, "rank mismatch in axpy");
        for (a, b) in self.comps.iter_mut().zip(&other.comps) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Pointwise weight `e^{(2 - 2 m) phi} C(m, k) dA` of component `k`.
fn weight(surface: &ConformalSurface, m: usize, k: usize, n: usize) -> f64 {
    let w = surface.e2phi[n].powf(1.0 - m as f64);
    w * binom(m, k) * surface.grid.cell_area()
}

/// `L^2` inner product of two rank-`m` tensor fields.
pub fn inner(surface: &ConformalSurface, s: &SymTensorField, t: &SymTensorField) -> f64 {
    assert_eq!(s.rank, t.rank, "rank mismatch in inner product");
    let m = s.rank;
    let mut acc = 0.0;
    for n in 0..surface.grid.len() {
        let w = surface.e2phi[n].powf(1.0 - m as f64);
        let mut local = 0.0;
        for k in 0..=m {
            local += binom(m, k) * s.comps[k][n] * t.comps[k][n];
        }
        acc += w * local;
    }
    acc * surface.grid.cell_area()
}

pub fn norm(surface: &ConformalSurface, t: &SymTensorField) -> f64 {
    inner(surface, t, t).max(0.0).sqrt()
}

/// Component derivatives `[comp][direction]`.
fn component_derivatives(surface: &ConformalSurface, t: &SymTensorField) -> Vec<[Vec<f64>; 2]> {
    t.comps.iter().map(|c| [surface.grid.dx(c), surface.grid.dy(c)]).collect()
}

/// One term of a covariant derivative `d_j T_(rest) - sum Gamma^l_{j, rest_b} T_(rest, b -> l)`.
struct CovTerm {
    dir: usize,
    comp: usize,
    gammas: Vec<(usize, usize, usize, usize)>,
}

fn cov_term(j: usize, rest: &[usize]) -> CovTerm {
    let base = count_ones(rest);
    let mut gammas = Vec::new();
    for &rb in rest {
        for l in 0..2 {
            let c = base - (rb == 1) as usize + (l == 1) as usize;
            gammas.push((l, j, rb, c));
        }
    }
    CovTerm { dir: j, comp: base, gammas }
}

#[inline]
fn eval_cov(term: &CovTerm, t: &SymTensorField, dt: &[[Vec<f64>; 2]], d: [f64; 2], n: usize) -> f64 {
    let mut v = dt[term.comp][term.dir][n];
    for &(l, j, i, c) in &term.gammas {
        v -= gamma_val(l, j, i, d) * t.comps[c][n];
    }
    v
}

/// `D = S grad`, rank `m -> m + 1`.
pub fn sym_derivative(surface: &ConformalSurface, t: &SymTensorField) -> SymTensorField {
    let m = t.rank;
    let dt = component_derivatives(surface, t);
    let mut comps = Vec::with_capacity(m + 2);
    for k in 0..=m + 1 {
        let tuple = representative(m + 1, k);
        let terms: Vec<CovTerm> = (0..=m)
            .map(|a| {
                let mut rest = tuple.clone();
                let j = rest.remove(a);
                cov_term(j, &rest)
            })
            .collect();
        let scale = 1.0 / (m + 1) as f64;
        let out: Vec<f64> = (0..surface.grid.len())
            .map(|n| {
                let d = [surface.phi_x[n], surface.phi_y[n]];
                scale * terms.iter().map(|tm| eval_cov(tm, t, &dt, d, n)).sum::<f64>()
            })
            .collect();
        comps.push(out);
    }
    SymTensorField { rank: m + 1, comps }
}

/// `-tr_g grad T`, rank `m -> m - 1`; adjoint of [`sym_derivative`].
pub fn divergence(surface: &ConformalSurface, t: &SymTensorField) -> Result<SymTensorField> {
    let m = t.rank;
    if m == 0 {
        return Err(MagrayError::Rank("divergence needs rank >= 1".into()));
    }
    let dt = component_derivatives(surface, t);
    let mut comps = Vec::with_capacity(m);
    for k in 0..m {
        let tuple = representative(m - 1, k);
        let terms: Vec<CovTerm> = (0..2)
            .map(|j| {
                let mut rest = vec![j];
                rest.extend(&tuple);
                cov_term(j, &rest)
            })
            .collect();
        let out: Vec<f64> = (0..surface.grid.len())
            .map(|n| {
                let d = [surface.phi_x[n], surface.phi_y[n]];
                let s: f64 = terms.iter().map(|tm| eval_cov(tm, t, &dt, d, n)).sum();
                -s / surface.e2phi[n]
            })
            .collect();
        comps.push(out);
    }
    Ok(SymTensorField { rank: m - 1, comps })
}

/// `Y(T)(v_1..v_m) = (1/m) sum_a T(.., b J v_a, ..)` with `b` on the grid; identity for `m = 0`.
pub fn lorentz_with(b: &[f64], t: &SymTensorField) -> SymTensorField {
    let m = t.rank;
    if m == 0 {
        return t.clone();
    }
    // Y e_0 = b e_1 and Y e_1 = -b e_0
    let mut comps = Vec::with_capacity(m + 1);
    for k in 0..=m {
        let tuple = representative(m, k);
        let mut terms: Vec<(f64, usize)> = Vec::new();
        for &ia in &tuple {
            let (sign, c) = if ia == 0 { (1.0, k + 1) } else { (-1.0, k - 1) };
            terms.push((sign / m as f64, c));
        }
        let out: Vec<f64> =
            (0..b.len()).map(|n| b[n] * terms.iter().map(|&(s, c)| s * t.comps[c][n]).sum::<f64>()).collect();
        comps.push(out);
    }
    SymTensorField { rank: m, comps }
}

pub fn lorentz_on_tensors(
    surface: &ConformalSurface,
    field: &ForceField,
    t: &SymTensorField,
) -> Result<SymTensorField> {
    field.require_magnetic("lorentz_on_tensors")?;
    Ok(lorentz_with(&field.b_grid(surface), t))
}

/// `tr_g T`, rank `m -> m - 2`.
pub fn trace(surface: &ConformalSurface, t: &SymTensorField) -> Result<SymTensorField> {
    let m = t.rank;
    if m < 2 {
        return Err(MagrayError::Rank("trace needs rank >= 2".into()));
    }
    let comps = (0..=m - 2)
        .map(|k| (0..t.len()).map(|n| (t.comps[k][n] + t.comps[k + 2][n]) / surface.e2phi[n]).collect())
        .collect();
    Ok(SymTensorField { rank: m - 2, comps })
}

/// `S(A (x) B)`.
pub fn sym_product(a: &SymTensorField, b: &SymTensorField) -> SymTensorField {
    let (ra, rb) = (a.rank, b.rank);
    let m = ra + rb;
    let total = binom(m, ra);
    let mut comps = Vec::with_capacity(m + 1);
    for k in 0..=m {
        let mut terms = Vec::new();
        for i in 0..=k.min(ra) {
            if k - i > rb || ra - i > m - k {
                continue;
            }
            terms.push((binom(k, i) * binom(m - k, ra - i) / total, i, k - i));
        }
        let out =
            (0..a.len()).map(|n| terms.iter().map(|&(c, i, j)| c * a.comps[i][n] * b.comps[j][n]).sum()).collect();
        comps.push(out);
    }
    SymTensorField { rank: m, comps }
}

/// `A (x) B` read off at the sorted index tuples, without symmetrizing.
pub fn unsymmetrized_product(a: &SymTensorField, b: &SymTensorField) -> SymTensorField {
    let (ra, rb) = (a.rank, b.rank);
    let m = ra + rb;
    let comps = (0..=m)
        .map(|k| {
            let ones_in_a = ra.saturating_sub(m - k);
            (0..a.len()).map(|n| a.comps[ones_in_a][n] * b.comps[k - ones_in_a][n]).collect()
        })
        .collect();
    SymTensorField { rank: m, comps }
}

/// `J u = S(g (x) u)`.
pub fn jmap(surface: &ConformalSurface, u: &SymTensorField) -> SymTensorField {
    sym_product(&SymTensorField::metric(surface), u)
}

/// Pair `[p, q]` of ranks `(m, m - 1)`; `q` is absent for `m = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorPair {
    pub p: SymTensorField,
    pub q: Option<SymTensorField>,
}

impl TensorPair {
    pub fn new(p: SymTensorField, q: Option<SymTensorField>) -> Result<Self> {
        match (&q, p.rank) {
            (None, 0) => {}
            (Some(q), m) if m >= 1 && q.rank == m - 1 => {}
            _ => {
                return Err(MagrayError::Rank(format!(
                    "pair ranks must be (m, m-1); got ({}, {:?})",
                    p.rank,
                    q.as_ref().map(|q| q.rank)
                )))
            }
        }
        Ok(Self { p, q })
    }

    pub fn zeros(surface: &ConformalSurface, m: usize) -> Self {
        Self { p: SymTensorField::zeros(surface, m), q: (m >= 1).then(|| SymTensorField::zeros(surface, m - 1)) }
    }

    pub fn random<R: Rng + ?Sized>(surface: &ConformalSurface, m: usize, kmax: i64, rng: &mut R) -> Self {
        Self {
            p: SymTensorField::random(surface, m, kmax, rng),
            q: (m >= 1).then(|| SymTensorField::random(surface, m - 1, kmax, rng)),
        }
    }

    pub fn rank(&self) -> usize {
        self.p.rank
    }

    pub fn fields(&self) -> impl Iterator<Item = &SymTensorField> {
        std::iter::once(&self.p).chain(self.q.iter())
    }

    fn fields_mut(&mut self) -> impl Iterator<Item = &mut SymTensorField> {
        std::iter::once(&mut self.p).chain(self.q.iter_mut())
    }

    pub fn scale(&mut self, s: f64) {
        for f in self.fields_mut() {
            f.scale(s);
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.scale(s);
        out
    }

    pub fn axpy(&mut self, s: f64, other: &Self) {
        self.p.axpy(s, &other.p);
        if let (Some(a), Some(b)) = (self.q.as_mut(), other.q.as_ref()) {
            a.axpy(s, b);
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// Flattened components `[p_0, .., p_m, q_0, .., q_{m-1}]`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.fields().flat_map(|f| f.comps.iter().flatten().copied()).collect()
    }

    pub fn from_vec(surface: &ConformalSurface, m: usize, v: &[f64]) -> Self {
        let len = surface.grid.len();
        let mut out = Self::zeros(surface, m);
        let mut chunks = v.chunks(len);
        for f in out.fields_mut() {
            for c in &mut f.comps {
                c.copy_from_slice(chunks.next().expect("vector too short for pair"));
            }
        }
        out
    }

    /// Number of scalar grids in a rank-`m` pair.
    pub fn component_count(m: usize) -> usize {
        if m == 0 {
            1
        } else {
            2 * m + 1
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.fields().map(|f| f.max_abs()).fold(0.0, f64::max)
    }
}

pub fn pair_inner(surface: &ConformalSurface, a: &TensorPair, b: &TensorPair) -> f64 {
    let mut v = inner(surface, &a.p, &b.p);
    if let (Some(x), Some(y)) = (&a.q, &b.q) {
        v += inner(surface, x, y);
    }
    v
}

pub fn pair_norm(surface: &ConformalSurface, a: &TensorPair) -> f64 {
    pair_inner(surface, a, a).max(0.0).sqrt()
}

/// Pointwise weights of the flattened pair layout, matching [`pair_inner`].
pub fn pair_weights(surface: &ConformalSurface, m: usize) -> Vec<f64> {
    let len = surface.grid.len();
    let mut w = Vec::with_capacity(len * TensorPair::component_count(m));
    let mut push_rank = |r: usize| {
        for k in 0..=r {
            for n in 0..len {
                w.push(weight(surface, r, k, n));
            }
        }
    };
    push_rank(m);
    if m >= 1 {
        push_rank(m - 1);
    }
    w
}

/// How the `(r - 1) Y(eta) (x) g` entry of `D_mu` is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProductMode {
    Symmetrized,
    /// Negative control: the tensor product read at sorted index tuples.
    Unsymmetrized,
}

/// `D_mu` on a pair of ranks `(r, r - 1)`, producing ranks `(r + 1, r)`.
pub fn dmu(surface: &ConformalSurface, field: &ForceField, a: &TensorPair) -> Result<TensorPair> {
    dmu_with(surface, field, a, ProductMode::Symmetrized)
}

pub fn dmu_with(
    surface: &ConformalSurface,
    field: &ForceField,
    a: &TensorPair,
    mode: ProductMode,
) -> Result<TensorPair> {
    field.require_magnetic("dmu")?;
    let b = field.b_grid(surface);
    let r = a.rank();
    let mut p = sym_derivative(surface, &a.p);
    if let Some(eta) = &a.q {
        if r >= 2 {
            let g = SymTensorField::metric(surface);
            let y_eta = lorentz_with(&b, eta);
            let term = match mode {
                ProductMode::Symmetrized => sym_product(&y_eta, &g),
                ProductMode::Unsymmetrized => unsymmetrized_product(&y_eta, &g),
            };
            p.axpy((r - 1) as f64, &term);
        }
    }
    let mut q = match &a.q {
        Some(eta) => sym_derivative(surface, eta),
        None => SymTensorField::zeros(surface, 0),
    };
    if r >= 1 {
        q.axpy(r as f64, &lorentz_with(&b, &a.p));
    }
    Ok(TensorPair { p, q: Some(q) })
}

/// `D_mu^*` on data of ranks `(m, m - 1)`, producing ranks `(m - 1, m - 2)`.
pub fn dmu_star(surface: &ConformalSurface, field: &ForceField, f: &TensorPair) -> Result<TensorPair> {
    field.require_magnetic("dmu_star")?;
    let m = f.rank();
    if m == 0 {
        return Err(MagrayError::Rank("dmu_star needs rank >= 1".into()));
    }
    let b = field.b_grid(surface);
    let q = f.q.as_ref().expect("rank >= 1 pair has q");
    let mut top = divergence(surface, &f.p)?;
    if m >= 2 {
        top.axpy(-((m - 1) as f64), &lorentz_with(&b, q));
    }
    let bottom = if m >= 2 {
        let mut s = divergence(surface, q)?;
        s.axpy(-(m as f64), &trace(surface, &lorentz_with(&b, &f.p))?);
        Some(s)
    } else {
        None
    };
    Ok(TensorPair { p: top, q: bottom })
}

/// `L^2`-normalized generator of `ker D_mu` on ranks `(m, m - 1)`:
/// `[J^{m/2} 1, 0]` for even `m`, `[0, J^{(m-1)/2} 1]` for odd `m`.
pub fn kernel_element(surface: &ConformalSurface, m: usize) -> TensorPair {
    let mut u = SymTensorField::constant(surface, 1.0);
    for _ in 0..m / 2 {
        u = jmap(surface, &u);
    }
    let mut pair = TensorPair::zeros(surface, m);
    if m.is_multiple_of(2) {
        pair.p = u;
    } else {
        pair.q = Some(u);
    }
    let n = pair_norm(surface, &pair);
    pair.scaled(1.0 / n)
}

/// `Delta_m = D_mu^* D_mu (+ Pi_K)` on potentials of rank-`m` data, i.e. on
/// pairs of ranks `(m - 1, m - 2)`.
pub struct LaplaceOperator<'a> {
    surface: &'a ConformalSurface,
    field: &'a ForceField,
    kernel: Option<TensorPair>,
    rank: usize,
}

impl<'a> LaplaceOperator<'a> {
    pub fn new(surface: &'a ConformalSurface, field: &'a ForceField, m: usize, with_projection: bool) -> Result<Self> {
        field.require_magnetic("ps_decompose")?;
        if m == 0 {
            return Err(MagrayError::Rank("Delta_m needs m >= 1".into()));
        }
        Ok(Self { surface, field, kernel: with_projection.then(|| kernel_element(surface, m - 1)), rank: m - 1 })
    }

    /// Rank of the pairs this operator acts on.
    pub fn domain_rank(&self) -> usize {
        self.rank
    }

    pub fn apply(&self, x: &TensorPair) -> Result<TensorPair> {
        let mut out = dmu_star(self.surface, self.field, &dmu(self.surface, self.field, x)?)?;
        if let Some(k) = &self.kernel {
            out.axpy(pair_inner(self.surface, x, k), k);
        }
        Ok(out)
    }
}

/// Output of [`ps_decompose`]: `f = D_mu P + H` with `D_mu^* H = 0`.
#[derive(Debug, Clone)]
pub struct PsDecomposition {
    pub potential: TensorPair,
    pub solenoidal: TensorPair,
    pub iterations: usize,
    /// `|Delta_m P - D_mu^* f| / max(|D_mu^* f|, |f|)` at exit.
    pub residual: f64,
}

/// Preconditioner `W^{-1/2} (c - Lap)^{-1} W^{1/2}` per component.
fn precondition(surface: &ConformalSurface, sqrt_w: &[f64], r: &TensorPair) -> TensorPair {
    let grid = &surface.grid;
    let shift = (2.0 * std::f64::consts::PI / grid.lx.max(grid.ly)).powi(2);
    let m = r.rank();
    let v = r.to_vec();
    let len = grid.len();
    let mut out = Vec::with_capacity(v.len());
    for (c, chunk) in v.chunks(len).enumerate() {
        let w = &sqrt_w[c * len..(c + 1) * len];
        let scaled: Vec<f64> = chunk.iter().zip(w).map(|(a, s)| a * s).collect();
        let solved = grid.multiplier(&scaled, |kx, ky| Complex64::new(1.0 / (shift + kx * kx + ky * ky), 0.0));
        out.extend(solved.iter().zip(w).map(|(a, s)| a / s));
    }
    TensorPair::from_vec(surface, m, &out)
}

/// Potential-solenoidal decomposition of `f` (ranks `(m, m - 1)`, `m >= 1`) by
/// preconditioned conjugate gradients on `Delta_m P = D_mu^* f`, stopped once
/// the residual is below `tol max(|D_mu^* f|, |f|)`.
pub fn ps_decompose(
    surface: &ConformalSurface,
    field: &ForceField,
    f: &TensorPair,
    tol: f64,
    max_iter: usize,
) -> Result<PsDecomposition> {
    if !(tol > 0.0) {
        return Err(MagrayError::Domain(format!("tolerance must be positive, got {tol}")));
    }
    let m = f.rank();
    let op = LaplaceOperator::new(surface, field, m, true)?;
    let rhs = dmu_star(surface, field, f)?;
    // Data already solenoidal to within `tol |f|` returns at once; a purely
    // relative target would chase rounding noise in `D_mu^* f`.
    let scale = pair_norm(surface, &rhs).max(pair_norm(surface, f));
    let mut x = TensorPair::zeros(surface, m - 1);
    let initial = pair_norm(surface, &rhs) / scale.max(f64::MIN_POSITIVE);
    if initial <= tol {
        return Ok(PsDecomposition { potential: x, solenoidal: f.clone(), iterations: 0, residual: initial });
    }
    let sqrt_w: Vec<f64> = pair_weights(surface, m - 1).iter().map(|w| w.sqrt()).collect();
    let mut r = rhs.clone();
    let mut z = precondition(surface, &sqrt_w, &r);
    let mut d = z.clone();
    let mut rz = pair_inner(surface, &r, &z);
    let mut residual = 1.0;
    for it in 1..=max_iter {
        let ad = op.apply(&d)?;
        let curv = pair_inner(surface, &d, &ad);
        if curv <= 0.0 {
            break;
        }
        let alpha = rz / curv;
        x.axpy(alpha, &d);
        r.axpy(-alpha, &ad);
        residual = pair_norm(surface, &r) / scale;
        if residual <= tol {
            let mut solenoidal = f.clone();
            solenoidal.axpy(-1.0, &dmu(surface, field, &x)?);
            return Ok(PsDecomposition { potential: x, solenoidal, iterations: it, residual });
        }
        z = precondition(surface, &sqrt_w, &r);
        let rz_new = pair_inner(surface, &r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        let mut next = z.clone();
        next.axpy(beta, &d);
        d = next;
    }
    Err(MagrayError::NonConvergence { solver: "conjugate gradient", iterations: max_iter, residual })
}

/// Default CG cap `10 nx ny`.
pub fn default_max_iter(surface: &ConformalSurface) -> usize {
    10 * surface.grid.len()
}

/// Singular values (ascending) of the Galerkin discretization of `Delta_m`,
/// with or without the kernel projection, on the Nyquist-free trigonometric
/// space of the surface grid. Dense; intended for grids with `N <= 16`.
pub fn laplacian_singular_values(
    surface: &ConformalSurface,
    field: &ForceField,
    m: usize,
    with_projection: bool,
) -> Result<Vec<f64>> {
    let op = LaplaceOperator::new(surface, field, m, with_projection)?;
    let r = op.domain_rank();
    let basis = crate::dense::block_basis(&surface.grid, TensorPair::component_count(r))?;
    let weights = pair_weights(surface, r);
    let (a, g) =
        crate::dense::galerkin(&basis, &weights, |v| Ok(op.apply(&TensorPair::from_vec(surface, r, v))?.to_vec()))?;
    Ok(crate::dense::singular_values(&crate::dense::whiten(&a, &g)))
}

/// Orthogonal projector onto `ker i_xi` inside `S^m` at a point, in the
/// orthonormal coordinates `sqrt(C(m, k)) T_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionProjector {
    pub m: usize,
    pub matrix: DMatrix<f64>,
}

impl ContractionProjector {
    fn scales(&self) -> Vec<f64> {
        (0..=self.m).map(|k| binom(self.m, k).sqrt()).collect()
    }

    /// Applies the projector to raw components `T_k`.
    pub fn apply_raw(&self, comps: &[f64]) -> Vec<f64> {
        let s = self.scales();
        let v = DVector::from_iterator(self.m + 1, comps.iter().zip(&s).map(|(c, s)| c * s));
        let w = &self.matrix * v;
        w.iter().zip(&s).map(|(a, s)| a / s).collect()
    }

    /// A raw-component tensor spanning the range, unit in the flat pointwise norm.
    pub fn polarization(&self) -> Vec<f64> {
        let best = (0..=self.m)
            .map(|k| self.matrix.column(k).norm())
            .enumerate()
            .fold((0, -1.0), |acc, (k, n)| if n > acc.1 { (k, n) } else { acc })
            .0;
        let col = self.matrix.column(best);
        let unit = col / col.norm();
        unit.iter().zip(self.scales()).map(|(a, s)| a / s).collect()
    }
}

pub fn contraction_projector(xi: [f64; 2], m: usize) -> Result<ContractionProjector> {
    if xi[0] == 0.0 && xi[1] == 0.0 {
        return Err(MagrayError::Domain("contraction projector needs xi != 0".into()));
    }
    let dim = m + 1;
    if m == 0 {
        return Ok(ContractionProjector { m, matrix: DMatrix::identity(1, 1) });
    }
    // (i_xi T)_k = xi_0 T_k + xi_1 T_{k+1} in raw components
    let mut a = DMatrix::zeros(m, dim);
    for k in 0..m {
        a[(k, k)] = xi[0] / binom(m, k).sqrt();
        a[(k, k + 1)] = xi[1] / binom(m, k + 1).sqrt();
    }
    let gram = &a * a.transpose();
    let inv = gram.try_inverse().ok_or_else(|| MagrayError::Domain("degenerate contraction".into()))?;
    let matrix = DMatrix::identity(dim, dim) - a.transpose() * inv * a;
    Ok(ContractionProjector { m, matrix })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn flat(n: usize) -> ConformalSurface {
        ConformalSurface::flat(n, n, 2.0 * PI, 2.0 * PI).unwrap()
    }

    #[test]
    fn binomials() {
        assert_eq!(binom(4, 2), 6.0);
        assert_eq!(binom(3, 0), 1.0);
        assert_eq!(binom(2, 3), 0.0);
    }

    #[test]
    fn gradient_of_sine() {
        let s = flat(16);
        let f = SymTensorField::scalar(s.grid.sample(|x, _| x.sin()));
        let df = sym_derivative(&s, &f);
        for n in 0..s.grid.len() {
            let x = s.grid.x(n / s.grid.ny);
            assert!((df.comps[0][n] - x.cos()).abs() < 1e-12);
            assert!(df.comps[1][n].abs() < 1e-12);
        }
    }

    #[test]
    fn divergence_of_cosine_form() {
        let s = flat(16);
        let xi = SymTensorField::from_comps(1, vec![s.grid.sample(|x, _| x.cos()), vec![0.0; 256]]).unwrap();
        let d = divergence(&s, &xi).unwrap();
        for n in 0..s.grid.len() {
            let x = s.grid.x(n / s.grid.ny);
            assert!((d.comps[0][n] - x.sin()).abs() < 1e-12);
        }
        assert!(divergence(&s, &SymTensorField::zeros(&s, 0)).is_err());
    }

    #[test]
    fn lorentz_rotates_dx_to_minus_dy() {
        let s = flat(8);
        let f = ForceField::constant_magnetic(&s, 1.0);
        let dx = SymTensorField::from_comps(1, vec![vec![1.0; 64], vec![0.0; 64]]).unwrap();
        let y = lorentz_on_tensors(&s, &f, &dx).unwrap();
        assert!(y.comps[0].iter().all(|v| v.abs() < 1e-15));
        assert!(y.comps[1].iter().all(|v| (v + 1.0).abs() < 1e-15));
    }

    #[test]
    fn lorentz_annihilates_metric() {
        let s =
            ConformalSurface::from_modes(8, 8, 1.0, 1.0, &[crate::geometry::FourierMode::new(1, 1, 0.2, 0.0)]).unwrap();
        let f = ForceField::constant_magnetic(&s, 0.7);
        let y = lorentz_on_tensors(&s, &f, &SymTensorField::metric(&s)).unwrap();
        assert!(y.max_abs() < 1e-14);
    }

    #[test]
    fn thermostat_rejected_by_tensor_operators() {
        let s = flat(8);
        let f = ForceField::constant_thermostat(&s, 0.2);
        let err = lorentz_on_tensors(&s, &f, &SymTensorField::zeros(&s, 1)).unwrap_err();
        assert!(matches!(err, MagrayError::Unsupported { .. }));
        assert!(dmu(&s, &f, &TensorPair::zeros(&s, 1)).is_err());
    }

    #[test]
    fn jmap_of_one_is_metric() {
        let s = flat(8);
        let g = jmap(&s, &SymTensorField::constant(&s, 1.0));
        assert_eq!(g.comps, SymTensorField::metric(&s).comps);
    }

    #[test]
    fn contraction_projector_m1() {
        let p = contraction_projector([1.0, 0.0], 1).unwrap();
        assert!((p.matrix[(0, 0)]).abs() < 1e-15 && (p.matrix[(1, 1)] - 1.0).abs() < 1e-15);
        assert!(contraction_projector([0.0, 0.0], 2).is_err());
    }
}
