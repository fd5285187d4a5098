//! Null-hypothesis constraint maps `g(θ, y)` and the constants `η`, `σ²`
//! that centre and scale the discrepancy statistic.
//!
//! Three hypotheses ship with closed forms:
//!
//! | model        | `g(θ, y)`                                   | `η`                     | `σ²`                        |
//! |--------------|---------------------------------------------|-------------------------|-----------------------------|
//! | independence | `diag(y_11, …, y_rr)`                       | `(r² − r)/4`            | `(r² − r)/6`                |
//! | separable    | `(1/r)(Σ_α y_αα/σ_αα) Σ`                    | `(τ/r − 2 + r²)/4`      | `(τ²/r² − 2 + r²)/6`        |
//! | graphical    | `g_ab = y_ab` on `E`, `(g^{-1})_ab = 0` off | `M/2`                   | `M/3`                       |
//!
//! with `τ = Σ_ab σ_ab²/(σ_aa σ_bb)` and `M` the number of absent pairs.
//! These are the values for the flat kernel under the KL normalization.
//!
//! The generic engine evaluates the same constants from the tensor
//! `μ_{αβγν}(λ)` built from `ǧ(λ)` and the derivatives `∂ǧ/∂y_{αβ}`, for
//! any kernel and any map that supplies analytic derivatives. The
//! graphical map is implicit and only has the closed form.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermcore::{inverse_pd, is_positive_definite, Cholesky, HermitianMatrix, SquareMatrix, PD_TOL};
use crate::spectra::{KernelConstants, SpectralKind, SpectralSequence, TimeSeriesSample};

/// Covariance-selection convergence tolerance.
pub const COVSEL_TOL: f64 = 1e-10;
/// Covariance-selection sweep limit.
pub const COVSEL_MAX_SWEEPS: usize = 1000;

/// Undirected edge set over series `0..r`; self-pairs are implicit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSet {
    r: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl EdgeSet {
    /// 0-based pairs; order within a pair is irrelevant.
    pub fn new(r: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut edges = BTreeSet::new();
        for &(a, b) in pairs {
            if a >= r || b >= r {
                return Err(Error::InvalidHypothesis(format!(
                    "edge ({}, {}) out of range for r = {r}",
                    a + 1,
                    b + 1
                )));
            }
            if a == b {
                return Err(Error::InvalidHypothesis(format!("self-loop at series {}", a + 1)));
            }
            edges.insert((a.min(b), a.max(b)));
        }
        Ok(Self { r, edges })
    }

    /// Parses `"1-2,2-3"` (1-based). An empty string is the empty edge set.
    pub fn parse(spec: &str, r: usize) -> Result<Self> {
        let mut pairs = Vec::new();
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (a, b) = item
                .split_once('-')
                .ok_or_else(|| Error::InvalidHypothesis(format!("bad edge '{item}', expected a-b")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .ok()
                    .filter(|&v| v >= 1)
                    .ok_or_else(|| Error::InvalidHypothesis(format!("bad series index '{s}' in edge '{item}'")))
            };
            pairs.push((parse(a)? - 1, parse(b)? - 1));
        }
        Self::new(r, &pairs)
    }

    pub fn complete(r: usize) -> Self {
        let edges = (0..r).flat_map(|a| ((a + 1)..r).map(move |b| (a, b))).collect();
        Self { r, edges }
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        a == b || self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    /// Pairs `a < b` not in the set.
    pub fn absent_pairs(&self) -> Vec<(usize, usize)> {
        (0..self.r)
            .flat_map(|a| ((a + 1)..self.r).map(move |b| (a, b)))
            .filter(|&(a, b)| !self.contains(a, b))
            .collect()
    }

    /// `M`, the number of absent pairs.
    pub fn absent_count(&self) -> usize {
        self.r * (self.r - 1) / 2 - self.edges.len()
    }

    /// Edge set under the relabeling `new index = position of old index in perm`,
    /// matching [`TimeSeriesSample::permuted`].
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self> {
        let mut inv = vec![0; self.r];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let pairs: Vec<_> = self.edges().map(|(a, b)| (inv[a], inv[b])).collect();
        Self::new(self.r, &pairs)
    }
}

impl fmt::Display for EdgeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let items: Vec<String> = self.edges().map(|(a, b)| format!("{}-{}", a + 1, b + 1)).collect();
        f.write_str(&items.join(","))
    }
}

/// Estimated nuisance parameter `θ̂`.
#[derive(Debug, Clone, PartialEq)]
pub enum Theta {
    Empty,
    /// `Σ̂ = (1/n) Σ Z_t Z_t'`, θ = vec(Σ).
    Covariance(HermitianMatrix),
}

impl Theta {
    /// Column-stacked parameter vector.
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            Theta::Empty => Vec::new(),
            Theta::Covariance(s) => {
                let r = s.dim();
                (0..r).flat_map(|col| (0..r).map(move |row| (row, col))).map(|(i, j)| s[(i, j)].re).collect()
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Theta::Empty => 0,
            Theta::Covariance(s) => s.dim() * s.dim(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// User-supplied constraint map for hypotheses outside the built-in three.
///
/// `derivatives` returns the `r²` matrices `∂g/∂y_{αβ}` at `(θ, y)` in
/// row-major `(α, β)` order; entries of `y` are treated as formally
/// independent.
pub trait ConstraintMap: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn estimate_theta(&self, _sample: &TimeSeriesSample) -> Result<Theta> {
        Ok(Theta::Empty)
    }

    fn restrict(&self, theta: &Theta, y: &HermitianMatrix) -> Result<HermitianMatrix>;

    fn derivatives(&self, theta: &Theta, y: &HermitianMatrix) -> Vec<SquareMatrix>;
}

#[derive(Debug, Clone)]
pub enum HypothesisModel {
    Independence,
    Separable,
    Graphical(EdgeSet),
    Custom(Arc<dyn ConstraintMap>),
}

impl HypothesisModel {
    /// Rejects the complete graph, whose `σ² = 0`.
    pub fn graphical(edges: EdgeSet) -> Result<Self> {
        if edges.absent_count() == 0 {
            return Err(Error::InvalidHypothesis(
                "graphical hypothesis needs at least one absent pair".into(),
            ));
        }
        Ok(Self::Graphical(edges))
    }

    pub fn name(&self) -> String {
        match self {
            Self::Independence => "independence".into(),
            Self::Separable => "separable".into(),
            Self::Graphical(_) => "graphical".into(),
            Self::Custom(c) => c.name().into(),
        }
    }

    /// Parameter dimension `v` for an `r`-variate series.
    pub fn parameter_dim(&self, r: usize) -> usize {
        match self {
            Self::Separable => r * r,
            _ => 0,
        }
    }

    /// Checks the model against the series count.
    pub fn validate(&self, r: usize) -> Result<()> {
        match self {
            Self::Independence | Self::Separable if r < 2 => Err(Error::InvalidHypothesis(format!(
                "{} hypothesis needs at least two series, got {r}",
                self.name()
            ))),
            Self::Graphical(e) if e.r() != r => Err(Error::InvalidHypothesis(format!(
                "edge set is over {} series, sample has {r}",
                e.r()
            ))),
            _ => Ok(()),
        }
    }
}

pub fn estimate_theta(model: &HypothesisModel, sample: &TimeSeriesSample) -> Result<Theta> {
    match model {
        HypothesisModel::Separable => {
            let s = HermitianMatrix::from_real(sample.r(), &sample.second_moment())?;
            if !is_positive_definite(&s, PD_TOL) {
                return Err(Error::SingularCovariance);
            }
            Ok(Theta::Covariance(s))
        }
        HypothesisModel::Custom(c) => c.estimate_theta(sample),
        _ => Ok(Theta::Empty),
    }
}

fn covariance_of(theta: &Theta, r: usize) -> Result<&HermitianMatrix> {
    match theta {
        Theta::Covariance(s) if s.dim() == r => Ok(s),
        _ => Err(Error::InvalidHypothesis(format!(
            "separable model needs an {r}x{r} covariance parameter"
        ))),
    }
}

/// `g(θ̂, y)` at a single frequency.
pub fn restrict_one(model: &HypothesisModel, theta: &Theta, y: &HermitianMatrix) -> Result<HermitianMatrix> {
    match model {
        HypothesisModel::Independence => Ok(HermitianMatrix::from_diagonal(&y.diagonal())),
        HypothesisModel::Separable => {
            let r = y.dim();
            let sigma = covariance_of(theta, r)?;
            let level: f64 = (0..r).map(|a| y[(a, a)].re / sigma[(a, a)].re).sum::<f64>() / r as f64;
            Ok(sigma.scale(level))
        }
        HypothesisModel::Graphical(e) => covariance_selection(y, e, COVSEL_TOL, COVSEL_MAX_SWEEPS),
        HypothesisModel::Custom(c) => c.restrict(theta, y),
    }
}

/// `f̂_{R,t} = g(θ̂, f̂_{U,t})`. Indices where the map fails or leaves the PD
/// cone are flagged rather than reported as errors.
pub fn restricted_estimate(
    model: &HypothesisModel,
    fu: &SpectralSequence,
    theta: &Theta,
) -> Result<SpectralSequence> {
    model.validate(fu.r())?;
    if let HypothesisModel::Separable = model {
        covariance_of(theta, fu.r())?;
    }
    let mut matrices = Vec::with_capacity(fu.half());
    let mut flags = Vec::with_capacity(fu.half());
    for y in fu.matrices() {
        match restrict_one(model, theta, y) {
            Ok(g) => {
                flags.push(is_positive_definite(&g, PD_TOL));
                matrices.push(g);
            }
            Err(_) => {
                flags.push(false);
                matrices.push(y.clone());
            }
        }
    }
    SpectralSequence::with_flags(fu.n(), SpectralKind::Restricted, matrices, flags)
}

/// Completes `H` on `E`: the returned `G` agrees with `H` on the diagonal
/// and on every edge, and `(G^{-1})_ab = 0` for every absent pair.
///
/// Cyclic iterative proportional fitting over the absent pairs. For a pair
/// `S = {a, b}` the Schur complement `P = ((G^{-1})_SS)^{-1}` has its
/// off-diagonal entry removed by changing only `G_ab`, which keeps `G`
/// PD; the inverse is carried along by a rank-two update and refreshed
/// from scratch at the end of every sweep.
pub fn covariance_selection(
    h: &HermitianMatrix,
    edges: &EdgeSet,
    tol: f64,
    max_iter: usize,
) -> Result<HermitianMatrix> {
    let r = h.dim();
    if edges.r() != r {
        return Err(Error::DimensionMismatch(format!(
            "edge set over {} series applied to a {r}x{r} matrix",
            edges.r()
        )));
    }
    let absent = edges.absent_pairs();
    let mut k = inverse_pd(h)?;
    let mut g = h.clone().into_square();
    if absent.is_empty() {
        return Ok(h.clone());
    }
    let residual = |k: &HermitianMatrix| {
        let scale = k.max_abs();
        absent.iter().map(|&(a, b)| k[(a, b)].norm()).fold(0.0, f64::max) / scale
    };
    if residual(&k) <= tol {
        return Ok(h.clone());
    }
    let mut last = f64::INFINITY;
    for _ in 0..max_iter {
        let mut ks = k.into_square();
        for &(a, b) in &absent {
            let (kaa, kbb, kab) = (ks[(a, a)].re, ks[(b, b)].re, ks[(a, b)]);
            let det = kaa * kbb - kab.norm_sqr();
            // P = (K_SS)^{-1}
            let (paa, pbb, pab) = (kbb / det, kaa / det, -kab / det);
            g[(a, b)] -= pab;
            g[(b, a)] = g[(a, b)].conj();
            // K ← K + X (P'^{-1} − P^{-1}) X^H, X = K_{:,S} P, P' = diag(P).
            let da = 1.0 / paa - kaa;
            let db = 1.0 / pbb - kbb;
            let dab = -kab;
            let x: Vec<(Complex64, Complex64)> = (0..r)
                .map(|i| {
                    let (kia, kib) = (ks[(i, a)], ks[(i, b)]);
                    (kia * paa + kib * pab.conj(), kia * pab + kib * pbb)
                })
                .collect();
            for i in 0..r {
                let (xa, xb) = x[i];
                let ya = xa * da + xb * dab.conj();
                let yb = xa * dab + xb * db;
                for j in 0..r {
                    let (za, zb) = x[j];
                    ks[(i, j)] += ya * za.conj() + yb * zb.conj();
                }
            }
        }
        let gh = HermitianMatrix::symmetrize(g.clone());
        k = Cholesky::new(&gh)?.inverse();
        g = gh.into_square();
        last = residual(&k);
        if last <= tol {
            let out = HermitianMatrix::symmetrize(g);
            return Ok(restore_fixed_entries(out, h, edges));
        }
    }
    Err(Error::NoConvergence { sweeps: max_iter, residual: last })
}

/// Copies the diagonal and edge entries of `h` into `g` bit-for-bit.
fn restore_fixed_entries(g: HermitianMatrix, h: &HermitianMatrix, edges: &EdgeSet) -> HermitianMatrix {
    let r = g.dim();
    let sq = SquareMatrix::from_fn(r, |i, j| if edges.contains(i, j) { h[(i, j)] } else { g[(i, j)] });
    HermitianMatrix::symmetrize(sq)
}

/// `η` and `σ²` of the limiting normal law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaSigma {
    pub eta: f64,
    pub sigma2: f64,
}

impl EtaSigma {
    pub fn new(eta: f64, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() || !eta.is_finite() {
            return Err(Error::DegenerateVariance(sigma2));
        }
        Ok(Self { eta, sigma2 })
    }
}

/// `τ = Σ_ab σ_ab² / (σ_aa σ_bb)`.
pub fn separability_tau(sigma: &HermitianMatrix) -> f64 {
    let r = sigma.dim();
    let mut tau = 0.0;
    for a in 0..r {
        for b in 0..r {
            tau += sigma[(a, b)].norm_sqr() / (sigma[(a, a)].re * sigma[(b, b)].re);
        }
    }
    tau
}

/// Closed-form `η`, `σ²` (KL normalization). Separable uses the plug-in `τ̂`.
pub fn eta_sigma_closed(model: &HypothesisModel, theta: &Theta, r: usize) -> Result<EtaSigma> {
    model.validate(r)?;
    let rf = r as f64;
    match model {
        HypothesisModel::Independence => EtaSigma::new((rf * rf - rf) / 4.0, (rf * rf - rf) / 6.0),
        HypothesisModel::Separable => {
            let tau = separability_tau(covariance_of(theta, r)?);
            EtaSigma::new(
                (tau / rf - 2.0 + rf * rf) / 4.0,
                (tau * tau / (rf * rf) - 2.0 + rf * rf) / 6.0,
            )
        }
        HypothesisModel::Graphical(e) => {
            let m = e.absent_count() as f64;
            EtaSigma::new(m / 2.0, m / 3.0)
        }
        HypothesisModel::Custom(c) => Err(Error::InvalidHypothesis(format!(
            "no closed-form constants for custom model '{}'",
            c.name()
        ))),
    }
}

/// Analytic `∂g/∂y_{αβ}` at `(θ, y)`, row-major in `(α, β)`. `None` for
/// the implicit graphical map.
pub fn derivatives(model: &HypothesisModel, theta: &Theta, y: &HermitianMatrix) -> Result<Option<Vec<SquareMatrix>>> {
    let r = y.dim();
    let mut out = vec![SquareMatrix::zeros(r); r * r];
    match model {
        HypothesisModel::Independence => {
            for a in 0..r {
                out[a * r + a] = SquareMatrix::unit(r, a, a);
            }
        }
        HypothesisModel::Separable => {
            let sigma = covariance_of(theta, r)?;
            for a in 0..r {
                let s = 1.0 / (r as f64 * sigma[(a, a)].re);
                out[a * r + a] = sigma.as_square().scale(Complex64::new(s, 0.0));
            }
        }
        HypothesisModel::Graphical(_) => return Ok(None),
        HypothesisModel::Custom(c) => return Ok(Some(c.derivatives(theta, y))),
    }
    Ok(Some(out))
}

/// Dense 4-index tensor `μ_{αβγν}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MuTensor {
    r: usize,
    data: Vec<Complex64>,
}

impl MuTensor {
    pub fn r(&self) -> usize {
        self.r
    }

    pub fn get(&self, a: usize, b: usize, c: usize, d: usize) -> Complex64 {
        self.data[idx4(self.r, a, b, c, d)]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }
}

#[inline]
fn idx4(r: usize, a: usize, b: usize, c: usize, d: usize) -> usize {
    ((a * r + b) * r + c) * r + d
}

/// `μ_{αβγν} = ½ tr[D_{αβ} G D_{γν} G] − ½ [G D_{αβ} G]_{νγ} − ½ [G D_{γν} G]_{βα} + ½ G_{βγ} G_{να}`
/// with `G = ǧ^{-1}` and `D_{αβ} = ∂ǧ/∂y_{αβ}`.
pub fn mu_tensor(g_inv: &HermitianMatrix, dg: &[SquareMatrix]) -> MuTensor {
    let r = g_inv.dim();
    assert_eq!(dg.len(), r * r, "need r^2 derivative matrices");
    let gm = g_inv.as_square();
    let nonzero: Vec<bool> = dg.iter().map(|d| d.max_abs() > 0.0).collect();
    let dgm: Vec<SquareMatrix> = dg.iter().map(|d| d.mul(gm)).collect();
    let gdg: Vec<SquareMatrix> = dgm.iter().map(|p| gm.mul(p)).collect();
    let mut data = vec![Complex64::new(0.0, 0.0); r * r * r * r];
    for a in 0..r {
        for b in 0..r {
            let ab = a * r + b;
            for c in 0..r {
                for d in 0..r {
                    let cd = c * r + d;
                    let mut v = 0.5 * gm[(b, c)] * gm[(d, a)];
                    if nonzero[ab] && nonzero[cd] {
                        let (p, q) = (&dgm[ab], &dgm[cd]);
                        let mut tr = Complex64::new(0.0, 0.0);
                        for i in 0..r {
                            for j in 0..r {
                                tr += p[(i, j)] * q[(j, i)];
                            }
                        }
                        v += 0.5 * tr;
                    }
                    if nonzero[ab] {
                        v -= 0.5 * gdg[ab][(d, c)];
                    }
                    if nonzero[cd] {
                        v -= 0.5 * gdg[cd][(b, a)];
                    }
                    data[idx4(r, a, b, c, d)] = v;
                }
            }
        }
    }
    MuTensor { r, data }
}

/// Per-frequency integrands `(Σ μ_{αβγν} ǧ_{αν} ǧ_{γβ}, σ²-integrand)`.
pub fn eta_sigma_integrands(g: &HermitianMatrix, mu: &MuTensor) -> (Complex64, Complex64) {
    let r = g.dim();
    let mut eta = Complex64::new(0.0, 0.0);
    for a in 0..r {
        for b in 0..r {
            for c in 0..r {
                for d in 0..r {
                    eta += mu.get(a, b, c, d) * g[(a, d)] * g[(c, b)];
                }
            }
        }
    }
    // Both σ² products share the mode pattern (g[i][i'], g[i'][i], g[i][i'], g[i'][i]);
    // the second pairs the transformed tensor with μ at (p2, p3, p0, p1).
    let mut t = mu.data.clone();
    for mode in 0..4 {
        t = contract_mode(&t, r, mode, |i, ip| if mode % 2 == 0 { g[(i, ip)] } else { g[(ip, i)] });
    }
    let mut sigma = Complex64::new(0.0, 0.0);
    for p0 in 0..r {
        for p1 in 0..r {
            for p2 in 0..r {
                for p3 in 0..r {
                    let tv = t[idx4(r, p0, p1, p2, p3)];
                    sigma += tv * (mu.get(p0, p1, p2, p3).conj() + mu.get(p2, p3, p0, p1).conj());
                }
            }
        }
    }
    (eta, sigma)
}

/// `out[.., i', ..] = Σ_i x[.., i, ..] coeff(i, i')` along one of four modes.
fn contract_mode(x: &[Complex64], r: usize, mode: usize, coeff: impl Fn(usize, usize) -> Complex64) -> Vec<Complex64> {
    let stride = r.pow(3 - mode as u32);
    let mut out = vec![Complex64::new(0.0, 0.0); x.len()];
    for (pos, slot) in out.iter_mut().enumerate() {
        let ip = (pos / stride) % r;
        let base = pos - ip * stride;
        let mut s = Complex64::new(0.0, 0.0);
        for i in 0..r {
            s += x[base + i * stride] * coeff(i, ip);
        }
        *slot = s;
    }
    out
}

/// Generic `η`, `σ²` by a Riemann sum over the grid `t = 1..=⌊n/2⌋`:
/// `(1/π)∫_0^π h(λ) dλ ≈ (1/⌊n/2⌋) Σ_t h(λ_t)`. With a weight `φ`, the `η`
/// integrand is multiplied by `φ(λ_t)` and the `σ²` integrand by `φ(λ_t)²`.
pub fn eta_sigma_generic(
    g_grid: &SpectralSequence,
    dg_provider: impl Fn(&HermitianMatrix) -> Vec<SquareMatrix>,
    constants: KernelConstants,
    phi: Option<&dyn Fn(f64) -> f64>,
) -> Result<EtaSigma> {
    let half = g_grid.half();
    if half == 0 {
        return Err(Error::DimensionMismatch("empty frequency grid".into()));
    }
    let mut eta = Complex64::new(0.0, 0.0);
    let mut sigma = Complex64::new(0.0, 0.0);
    for t in 1..=half {
        let g = g_grid.at(t);
        if !is_positive_definite(g, PD_TOL) {
            return Err(Error::NotPositiveDefinite);
        }
        let g_inv = inverse_pd(g)?;
        let mu = mu_tensor(&g_inv, &dg_provider(g));
        let (e, s) = eta_sigma_integrands(g, &mu);
        let w = phi.map_or(1.0, |f| f(g_grid.frequency(t)));
        eta += e * w;
        sigma += s * (w * w);
    }
    let eta = eta * (constants.cu / half as f64);
    let sigma = sigma * (constants.du / half as f64);
    for (name, z) in [("eta", eta), ("sigma^2", sigma)] {
        if z.im.abs() > 1e-10 * z.re.abs().max(1.0) {
            return Err(Error::InvalidHypothesis(format!(
                "{name} has imaginary residue {:e}",
                z.im
            )));
        }
    }
    EtaSigma::new(eta.re, sigma.re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::KernelShape;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn herm3(h12: Complex64, h13: Complex64, h23: Complex64, d: [f64; 3]) -> HermitianMatrix {
        HermitianMatrix::from_rows(&[
            vec![c(d[0], 0.0), h12, h13],
            vec![h12.conj(), c(d[1], 0.0), h23],
            vec![h13.conj(), h23.conj(), c(d[2], 0.0)],
        ])
        .unwrap()
    }

    #[test]
    fn edge_parsing() {
        let e = EdgeSet::parse("1-2, 2-3", 3).unwrap();
        assert_eq!(e.absent_pairs(), vec![(0, 2)]);
        assert_eq!(e.absent_count(), 1);
        assert_eq!(e.to_string(), "1-2,2-3");
        assert!(EdgeSet::parse("1-4", 3).is_err());
        assert!(EdgeSet::parse("0-1", 3).is_err());
        assert!(EdgeSet::parse("2-2", 3).is_err());
        assert!(EdgeSet::parse("12", 3).is_err());
        assert!(HypothesisModel::graphical(EdgeSet::complete(3)).is_err());
    }

    #[test]
    fn second_moment_estimate() {
        let mut rows = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        rows.extend(std::iter::repeat(vec![0.0, 0.0]).take(6));
        let s = TimeSeriesSample::from_rows(&rows).unwrap();
        // n = 8 here; the two unit rows give 1/8 on the diagonal.
        match estimate_theta(&HypothesisModel::Separable, &s).unwrap() {
            Theta::Covariance(m) => {
                assert!(m.max_abs_diff(&HermitianMatrix::from_diagonal(&[0.125, 0.125])) < 1e-15)
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(estimate_theta(&HypothesisModel::Independence, &s).unwrap(), Theta::Empty);
        let zeros = TimeSeriesSample::new(8, 2, vec![0.0; 16]).unwrap();
        assert_eq!(estimate_theta(&HypothesisModel::Separable, &zeros), Err(Error::SingularCovariance));
    }

    #[test]
    fn chain_completion_closed_form() {
        let h = herm3(c(0.4, 0.0), c(0.9, 0.0), c(-0.3, 0.0), [2.0, 1.5, 1.0]);
        let e = EdgeSet::parse("1-2,2-3", 3).unwrap();
        let g = covariance_selection(&h, &e, COVSEL_TOL, COVSEL_MAX_SWEEPS).unwrap();
        let expected = h[(0, 1)] * h[(1, 2)] / h[(1, 1)];
        assert!((g[(0, 2)] - expected).norm() < 1e-12);
        let k = inverse_pd(&g).unwrap();
        assert!(k[(0, 2)].norm() < 1e-10 * k.max_abs());
    }

    #[test]
    fn complex_chain_completion() {
        let h = herm3(c(0.3, 0.4), c(-0.2, 0.5), c(0.1, -0.35), [2.0, 1.7, 1.3]);
        let e = EdgeSet::parse("1-2,2-3", 3).unwrap();
        let g = covariance_selection(&h, &e, COVSEL_TOL, COVSEL_MAX_SWEEPS).unwrap();
        let expected = h[(0, 1)] * h[(1, 2)] / h[(1, 1)];
        assert!((g[(0, 2)] - expected).norm() < 1e-12);
        for (i, j) in [(0, 0), (1, 1), (2, 2), (0, 1), (1, 2)] {
            assert_eq!(g[(i, j)], h[(i, j)]);
        }
    }

    #[test]
    fn complete_graph_is_identity_map() {
        let h = herm3(c(0.3, 0.4), c(-0.2, 0.5), c(0.1, -0.35), [2.0, 1.7, 1.3]);
        let g = covariance_selection(&h, &EdgeSet::complete(3), COVSEL_TOL, 10).unwrap();
        assert_eq!(g, h);
    }

    #[test]
    fn covariance_selection_rejects_indefinite() {
        let h = HermitianMatrix::from_diagonal(&[1.0, -1.0, 1.0]);
        let e = EdgeSet::parse("1-2", 3).unwrap();
        assert_eq!(covariance_selection(&h, &e, 1e-10, 10), Err(Error::NotPositiveDefinite));
    }

    #[test]
    fn closed_form_constants() {
        let es = eta_sigma_closed(&HypothesisModel::Independence, &Theta::Empty, 3).unwrap();
        assert_eq!((es.eta, es.sigma2), (1.5, 1.0));
        let sep = eta_sigma_closed(
            &HypothesisModel::Separable,
            &Theta::Covariance(HermitianMatrix::identity(2)),
            2,
        )
        .unwrap();
        assert!((sep.eta - 0.75).abs() < 1e-15 && (sep.sigma2 - 0.5).abs() < 1e-15);
        let g = HypothesisModel::graphical(EdgeSet::parse("1-2,2-3", 3).unwrap()).unwrap();
        let es = eta_sigma_closed(&g, &Theta::Empty, 3).unwrap();
        assert!((es.eta - 0.5).abs() < 1e-15 && (es.sigma2 - 1.0 / 3.0).abs() < 1e-15);
        assert!(eta_sigma_closed(&HypothesisModel::Independence, &Theta::Empty, 1).is_err());
    }

    #[test]
    fn mu_matches_independence_display() {
        let f = [1.3, 0.7, 2.1];
        let g = HermitianMatrix::from_diagonal(&f);
        let dg = derivatives(&HypothesisModel::Independence, &Theta::Empty, &g).unwrap().unwrap();
        let mu = mu_tensor(&inverse_pd(&g).unwrap(), &dg);
        let delta = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
        for a in 0..3 {
            for b in 0..3 {
                for cc in 0..3 {
                    for d in 0..3 {
                        let expected = 0.5
                            * (delta(a, d) * delta(b, cc) / (f[a] * f[b])
                                - delta(a, b) * delta(a, cc) * delta(cc, d) / (f[a] * f[a]));
                        assert!((mu.get(a, b, cc, d) - c(expected, 0.0)).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn mu_matches_separable_display() {
        let sigma = HermitianMatrix::from_real(3, &[2.0, 0.5, 0.2, 0.5, 1.0, -0.3, 0.2, -0.3, 1.5]).unwrap();
        let s = 0.8;
        let g = sigma.scale(s);
        let theta = Theta::Covariance(sigma.clone());
        let dg = derivatives(&HypothesisModel::Separable, &theta, &g).unwrap().unwrap();
        let mu = mu_tensor(&inverse_pd(&g).unwrap(), &dg);
        let si = inverse_pd(&sigma).unwrap();
        let delta = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
        let r = 3.0;
        for a in 0..3 {
            for b in 0..3 {
                for cc in 0..3 {
                    for d in 0..3 {
                        let (saa, scc) = (sigma[(a, a)].re, sigma[(cc, cc)].re);
                        let expected = (delta(a, b) * delta(cc, d) / (r * saa * scc)
                            - delta(a, b) * si[(d, cc)].re / (r * saa)
                            - delta(cc, d) * si[(b, a)].re / (r * scc)
                            + si[(b, cc)].re * si[(d, a)].re)
                            / (2.0 * s * s);
                        assert!((mu.get(a, b, cc, d).re - expected).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn unconstrained_map_has_zero_eta_integrand() {
        let g = herm3(c(0.3, 0.4), c(-0.2, 0.5), c(0.1, -0.35), [2.0, 1.7, 1.3]);
        let dg: Vec<SquareMatrix> = (0..9).map(|k| SquareMatrix::unit(3, k / 3, k % 3)).collect();
        let mu = mu_tensor(&inverse_pd(&g).unwrap(), &dg);
        let (eta, _) = eta_sigma_integrands(&g, &mu);
        assert!(eta.norm() < 1e-12, "eta integrand {eta}");
    }

    /// Direct eight-fold sum for the σ² integrand.
    fn sigma_brute(g: &HermitianMatrix, mu: &MuTensor) -> Complex64 {
        let r = g.dim();
        let mut s = Complex64::new(0.0, 0.0);
        for a in 0..r { for b in 0..r { for cc in 0..r { for d in 0..r {
            for a2 in 0..r { for b2 in 0..r { for c2 in 0..r { for d2 in 0..r {
                let prod = mu.get(a, b, cc, d) * mu.get(a2, b2, c2, d2).conj();
                let t1 = g[(a, a2)] * g[(b2, b)] * g[(cc, c2)] * g[(d2, d)];
                let t2 = g[(a, c2)] * g[(d2, b)] * g[(cc, a2)] * g[(b2, d)];
                s += prod * (t1 + t2);
            }}}}
        }}}}
        s
    }

    #[test]
    fn sigma_contraction_matches_brute_force() {
        let g = herm3(c(0.3, 0.4), c(-0.2, 0.5), c(0.1, -0.35), [2.0, 1.7, 1.3]);
        let dg: Vec<SquareMatrix> = (0..9)
            .map(|k| SquareMatrix::from_fn(3, |i, j| c(((k + 2 * i + j) % 5) as f64 * 0.1, ((k * j + i) % 3) as f64 * 0.05)))
            .collect();
        let mu = mu_tensor(&inverse_pd(&g).unwrap(), &dg);
        let (_, s) = eta_sigma_integrands(&g, &mu);
        let brute = sigma_brute(&g, &mu);
        assert!((s - brute).norm() < 1e-12 * brute.norm().max(1.0));
    }

    #[test]
    fn generic_weight_one_is_neutral() {
        let n = 64;
        let mats: Vec<HermitianMatrix> = (1..=n / 2)
            .map(|t| {
                let x = (t as f64 * 0.2).cos();
                HermitianMatrix::from_diagonal(&[2.0 + x, 1.5, 1.0 - 0.5 * x])
            })
            .collect();
        let grid = SpectralSequence::new(n, SpectralKind::Restricted, mats).unwrap();
        let provider = |y: &HermitianMatrix| {
            derivatives(&HypothesisModel::Independence, &Theta::Empty, y).unwrap().unwrap()
        };
        let k = KernelShape::Flat.constants();
        let plain = eta_sigma_generic(&grid, provider, k, None).unwrap();
        let one = |_: f64| 1.0;
        let weighted = eta_sigma_generic(&grid, provider, k, Some(&one)).unwrap();
        assert_eq!(plain, weighted);
        assert!((plain.eta - 1.5).abs() < 1e-12 && (plain.sigma2 - 1.0).abs() < 1e-12);
    }
}
