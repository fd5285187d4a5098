//! Fourier frame, periodogram matrices and the smoothed periodogram.
//!
//! Conventions
//! -----------
//! - `W_a(λ_j) = (2πn)^{-1/2} Σ_{t=1}^{n} Z_{a,t} e^{i t λ_j}` with
//!   `λ_j = 2πj/n`, `j = 0..n-1`. Time is indexed from 1, so the raw
//!   inverse FFT is multiplied by `e^{iλ_j}`.
//! - Periodogram indices are periodic: index `j` means `j mod n`. This
//!   resolves smoothing windows that cross `0` or `⌊n/2⌋`.
//! - Spectral sequences are indexed `t = 1..=⌊n/2⌋`.
//! - Bandwidths `m` are even; the window `j = -m/2..=m/2` has `m + 1`
//!   weights and `w* = Σ w_j` is the exact finite sum.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermcore::{is_positive_definite, Cholesky, HermitianMatrix, SquareMatrix, PD_TOL};

/// Minimum sample length accepted by [`TimeSeriesSample`].
pub const MIN_SAMPLE_LEN: usize = 8;

/// Panels per axis for the kernel-constant quadrature.
pub const DEFAULT_QUADRATURE_POINTS: usize = 2048;

/// `n×r` real observations, row `t` holding `Z_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesSample {
    n: usize,
    r: usize,
    values: Vec<f64>,
}

impl TimeSeriesSample {
    /// Row-major `n×r` values.
    pub fn new(n: usize, r: usize, values: Vec<f64>) -> Result<Self> {
        if r == 0 {
            return Err(Error::InvalidSample("need at least one series".into()));
        }
        if n < MIN_SAMPLE_LEN {
            return Err(Error::InvalidSample(format!(
                "sample length {n} is below the minimum of {MIN_SAMPLE_LEN}"
            )));
        }
        if values.len() != n * r {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values for n={n}, r={r}, got {}",
                n * r,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSample(format!(
                "non-finite value at row {}, column {}",
                pos / r + 1,
                pos % r + 1
            )));
        }
        Ok(Self { n, r, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|row| row.len() != r) {
            return Err(Error::DimensionMismatch(format!(
                "row {} has {} values, expected {r}",
                bad + 1,
                rows[bad].len()
            )));
        }
        Self::new(rows.len(), r, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Observation `Z_t`, `t` 0-based.
    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.r..(t + 1) * self.r]
    }

    pub fn get(&self, t: usize, a: usize) -> f64 {
        self.values[t * self.r + a]
    }

    pub fn column(&self, a: usize) -> Vec<f64> {
        (0..self.n).map(|t| self.get(t, a)).collect()
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.r];
        for t in 0..self.n {
            for (m, v) in means.iter_mut().zip(self.row(t)) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= self.n as f64);
        means
    }

    /// Subtracts the column means.
    pub fn demeaned(&self) -> Self {
        let means = self.column_means();
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| v - means[i % self.r])
            .collect();
        Self { n: self.n, r: self.r, values }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { n: self.n, r: self.r, values: self.values.iter().map(|v| v * c).collect() }
    }

    /// Reorders the series: new column `a` is old column `perm[a]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.r {
            return Err(Error::DimensionMismatch("permutation length".into()));
        }
        let mut values = Vec::with_capacity(self.values.len());
        for t in 0..self.n {
            for &p in perm {
                values.push(self.get(t, p));
            }
        }
        Self::new(self.n, self.r, values)
    }

    /// Sample second-moment matrix `(1/n) Σ Z_t Z_t'` (no centering).
    pub fn second_moment(&self) -> Vec<f64> {
        let r = self.r;
        let mut s = vec![0.0; r * r];
        for t in 0..self.n {
            let z = self.row(t);
            for a in 0..r {
                for b in 0..r {
                    s[a * r + b] += z[a] * z[b];
                }
            }
        }
        s.iter_mut().for_each(|v| *v /= self.n as f64);
        s
    }
}

/// Discrete Fourier transform of every series on the full Fourier grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierFrame {
    n: usize,
    r: usize,
    w: Vec<Complex64>,
}

impl FourierFrame {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> usize {
        self.r
    }

    /// `W_a(λ_j)` with periodic `j`.
    pub fn at(&self, j: i64, a: usize) -> Complex64 {
        self.w[self.wrap(j) * self.r + a]
    }

    /// DFT vector at periodic index `j`.
    pub fn vector(&self, j: i64) -> &[Complex64] {
        let k = self.wrap(j);
        &self.w[k * self.r..(k + 1) * self.r]
    }

    pub fn frequency(&self, j: i64) -> f64 {
        2.0 * PI * j as f64 / self.n as f64
    }

    fn wrap(&self, j: i64) -> usize {
        j.rem_euclid(self.n as i64) as usize
    }
}

pub fn dft(sample: &TimeSeriesSample) -> FourierFrame {
    let (n, r) = (sample.n(), sample.r());
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_inverse(n);
    let norm = 1.0 / (2.0 * PI * n as f64).sqrt();
    let mut w = vec![Complex64::new(0.0, 0.0); n * r];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for a in 0..r {
        for (t, slot) in buf.iter_mut().enumerate() {
            *slot = Complex64::new(sample.get(t, a), 0.0);
        }
        fft.process(&mut buf);
        for j in 0..n {
            let phase = Complex64::from_polar(1.0, 2.0 * PI * j as f64 / n as f64);
            w[j * r + a] = buf[j] * phase * norm;
        }
    }
    // Real data: exact conjugate symmetry, real ordinates at λ_0 and λ_{n/2}.
    for a in 0..r {
        w[a] = Complex64::new(w[a].re, 0.0);
        for j in 1..=(n / 2) {
            let k = n - j;
            if j == k {
                w[j * r + a] = Complex64::new(w[j * r + a].re, 0.0);
                continue;
            }
            let avg = (w[j * r + a] + w[k * r + a].conj()) * 0.5;
            w[j * r + a] = avg;
            w[k * r + a] = avg.conj();
        }
    }
    FourierFrame { n, r, w }
}

/// `I_Z(λ_j) = W(λ_j) W(λ_j)^H`, periodic in `j`.
pub fn periodogram_at(frame: &FourierFrame, j: i64) -> HermitianMatrix {
    let v = frame.vector(j);
    let r = frame.r();
    HermitianMatrix::symmetrize(SquareMatrix::from_fn(r, |a, b| v[a] * v[b].conj()))
}

/// Kernel shape `u(x)` on `[-1/2, 1/2]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelShape {
    /// `u(x) = 1`.
    Flat,
    /// `u(x) = 1 + cos(2πx)/2`.
    RaisedCosine,
}

impl KernelShape {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            KernelShape::Flat => 1.0,
            KernelShape::RaisedCosine => 1.0 + 0.5 * (2.0 * PI * x).cos(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelShape::Flat => "flat",
            KernelShape::RaisedCosine => "raised-cosine",
        }
    }

    /// Shape constants at the default quadrature resolution, computed once.
    pub fn constants(self) -> KernelConstants {
        static FLAT: OnceLock<KernelConstants> = OnceLock::new();
        static COSINE: OnceLock<KernelConstants> = OnceLock::new();
        let cell = match self {
            KernelShape::Flat => &FLAT,
            KernelShape::RaisedCosine => &COSINE,
        };
        *cell.get_or_init(|| kernel_constants(|x| self.eval(x), DEFAULT_QUADRATURE_POINTS))
    }
}

impl fmt::Display for KernelShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelShape {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "flat" | "uniform" | "daniell" => Ok(KernelShape::Flat),
            "raised-cosine" | "cosine" => Ok(KernelShape::RaisedCosine),
            other => Err(Error::InvalidKernel(format!("unknown kernel shape '{other}'"))),
        }
    }
}

/// `C_u`, `D_u`, `B_u` for a kernel shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConstants {
    pub cu: f64,
    pub du: f64,
    pub bu: f64,
}

/// Composite Simpson rule with `panels` (rounded up to even) subintervals.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let panels = panels.max(2) + panels % 2;
    let h = (b - a) / panels as f64;
    if h == 0.0 {
        return 0.0;
    }
    let mut acc = f(a) + f(b);
    for k in 1..panels {
        let coeff = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += coeff * f(a + k as f64 * h);
    }
    acc * h / 3.0
}

/// Kernel-shape constants by quadrature.
///
/// - `C_u = ½ ∫u² / (∫u)²`
/// - `D_u = ½ ∫∫∫ u(x)u(y)u(x+z)u(y+z) dz dy dx / (∫u)⁴`, `z ∈ [-1, 1]`,
///   `u ≡ 0` outside `[-1/2, 1/2]`
/// - `B_u = (∫u²)² / ∫u⁴`
///
/// The triple integral is evaluated as `∫ ρ(z)² dz` with the
/// autocorrelation `ρ(z) = ∫ u(x) u(x+z) dx`, integrating over the exact
/// overlap interval so the support indicator never enters the integrand.
pub fn kernel_constants(u: impl Fn(f64) -> f64, quadrature_points: usize) -> KernelConstants {
    let points = quadrature_points.max(64);
    let int_u = simpson(&u, -0.5, 0.5, points);
    let int_u2 = simpson(|x| u(x).powi(2), -0.5, 0.5, points);
    let int_u4 = simpson(|x| u(x).powi(4), -0.5, 0.5, points);
    let rho = |z: f64| {
        let lo = (-0.5f64).max(-0.5 - z);
        let hi = 0.5f64.min(0.5 - z);
        if hi <= lo {
            0.0
        } else {
            simpson(|x| u(x) * u(x + z), lo, hi, points)
        }
    };
    let rho_sq = |z: f64| rho(z).powi(2);
    let triple = simpson(rho_sq, -1.0, 0.0, points) + simpson(rho_sq, 0.0, 1.0, points);
    KernelConstants {
        cu: 0.5 * int_u2 / int_u.powi(2),
        du: 0.5 * triple / int_u.powi(4),
        bu: int_u2.powi(2) / int_u4,
    }
}

/// Smoothing weights `w_j = u(j/m)`, `j = -m/2..=m/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightKernel {
    shape: KernelShape,
    m: usize,
    weights: Vec<f64>,
    wstar: f64,
    constants: KernelConstants,
}

impl WeightKernel {
    pub fn new(shape: KernelShape, m: usize) -> Result<Self> {
        if m < 2 || m % 2 != 0 {
            return Err(Error::InvalidKernel(format!("bandwidth m = {m} must be even and >= 2")));
        }
        let half = (m / 2) as i64;
        let weights: Vec<f64> = (-half..=half).map(|j| shape.eval(j as f64 / m as f64)).collect();
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidKernel("weights must be positive".into()));
        }
        let wstar = weights.iter().sum();
        Ok(Self { shape, m, weights, wstar, constants: shape.constants() })
    }

    pub fn flat(m: usize) -> Result<Self> {
        Self::new(KernelShape::Flat, m)
    }

    pub fn shape(&self) -> KernelShape {
        self.shape
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Weight at offset `j ∈ [-m/2, m/2]`.
    pub fn weight(&self, j: i64) -> f64 {
        self.weights[(j + (self.m / 2) as i64) as usize]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn wstar(&self) -> f64 {
        self.wstar
    }

    pub fn constants(&self) -> KernelConstants {
        self.constants
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectralKind {
    Periodogram,
    Unrestricted,
    Restricted,
}

/// Hermitian matrices at `t = 1..=⌊n/2⌋` with per-index PD flags.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSequence {
    n: usize,
    r: usize,
    kind: SpectralKind,
    matrices: Vec<HermitianMatrix>,
    pd: Vec<bool>,
}

impl SpectralSequence {
    /// `matrices[t - 1]` is the value at index `t`; PD flags are recomputed.
    pub fn new(n: usize, kind: SpectralKind, matrices: Vec<HermitianMatrix>) -> Result<Self> {
        let pd = matrices.iter().map(|m| is_positive_definite(m, PD_TOL)).collect();
        Self::with_flags(n, kind, matrices, pd)
    }

    /// Explicit flags; an index may be flagged non-PD even if its matrix is
    /// (e.g. a failed covariance selection).
    pub fn with_flags(
        n: usize,
        kind: SpectralKind,
        matrices: Vec<HermitianMatrix>,
        pd: Vec<bool>,
    ) -> Result<Self> {
        if matrices.len() != n / 2 || pd.len() != matrices.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} matrices for n = {n}, got {}",
                n / 2,
                matrices.len()
            )));
        }
        let r = matrices.first().map_or(0, HermitianMatrix::dim);
        if matrices.iter().any(|m| m.dim() != r) {
            return Err(Error::DimensionMismatch("matrices of unequal dimension".into()));
        }
        Ok(Self { n, r, kind, matrices, pd })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn half(&self) -> usize {
        self.matrices.len()
    }

    pub fn kind(&self) -> SpectralKind {
        self.kind
    }

    /// Matrix at 1-based index `t`.
    pub fn at(&self, t: usize) -> &HermitianMatrix {
        &self.matrices[t - 1]
    }

    pub fn is_pd(&self, t: usize) -> bool {
        self.pd[t - 1]
    }

    pub fn pd_flags(&self) -> &[bool] {
        &self.pd
    }

    pub fn matrices(&self) -> &[HermitianMatrix] {
        &self.matrices
    }

    /// `λ_t = 2πt/n`.
    pub fn frequency(&self, t: usize) -> f64 {
        2.0 * PI * t as f64 / self.n as f64
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            n: self.n,
            r: self.r,
            kind: self.kind,
            matrices: self.matrices.iter().map(|m| m.scale(c)).collect(),
            pd: self.pd.clone(),
        }
    }
}

/// Raw periodogram ordinates `I_{Z,t}`, `t = 1..=⌊n/2⌋`.
pub fn periodogram_sequence(frame: &FourierFrame) -> SpectralSequence {
    let matrices = (1..=frame.n() / 2).map(|t| periodogram_at(frame, t as i64)).collect();
    SpectralSequence::new(frame.n(), SpectralKind::Periodogram, matrices)
        .expect("periodogram sequence is well formed")
}

fn check_bandwidth(n: usize, m: usize) -> Result<()> {
    if 2 * m >= n {
        return Err(Error::BandwidthTooLarge { m, n });
    }
    Ok(())
}

/// `f̂_{U,t} = (1/w*) Σ_{j=-m/2}^{m/2} w_j I_{Z,t+j}`.
pub fn smoothed_periodogram(
    sample: &TimeSeriesSample,
    kernel: &WeightKernel,
) -> Result<SpectralSequence> {
    smooth_frame(&dft(sample), kernel)
}

pub fn smooth_frame(frame: &FourierFrame, kernel: &WeightKernel) -> Result<SpectralSequence> {
    let (n, r, m) = (frame.n(), frame.r(), kernel.m());
    check_bandwidth(n, m)?;
    if m + 1 < r {
        return Err(Error::BandwidthTooSmall { m, r });
    }
    let half = (m / 2) as i64;
    let inv_wstar = 1.0 / kernel.wstar();
    let mut acc = vec![Complex64::new(0.0, 0.0); r * r];
    let mut matrices = Vec::with_capacity(n / 2);
    for t in 1..=(n / 2) as i64 {
        acc.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        for j in -half..=half {
            let w = kernel.weight(j);
            let v = frame.vector(t + j);
            for a in 0..r {
                let va = v[a] * w;
                for b in a..r {
                    acc[a * r + b] += va * v[b].conj();
                }
            }
        }
        let sq = SquareMatrix::from_fn(r, |a, b| {
            if a <= b {
                acc[a * r + b] * inv_wstar
            } else {
                acc[b * r + a].conj() * inv_wstar
            }
        });
        matrices.push(HermitianMatrix::symmetrize(sq));
    }
    SpectralSequence::new(n, SpectralKind::Unrestricted, matrices)
}

/// `f̂_{U,j,-j} = (1/m) Σ_{k=-m/2, k≠0}^{m/2} I_{Z,j+k}`.
pub fn leave_out_estimate(frame: &FourierFrame, j: i64, m: usize) -> Result<HermitianMatrix> {
    let (n, r) = (frame.n(), frame.r());
    if m < 2 || m % 2 != 0 {
        return Err(Error::InvalidKernel(format!("bandwidth m = {m} must be even and >= 2")));
    }
    check_bandwidth(n, m)?;
    if m < r {
        return Err(Error::BandwidthTooSmall { m, r });
    }
    let half = (m / 2) as i64;
    let sq = SquareMatrix::from_fn(r, |a, b| {
        let mut s = Complex64::new(0.0, 0.0);
        for k in (-half..=half).filter(|&k| k != 0) {
            let v = frame.vector(j + k);
            s += v[a] * v[b].conj();
        }
        s / m as f64
    });
    Ok(HermitianMatrix::symmetrize(sq))
}

/// Outcome of [`cvll_select`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvllSelection {
    pub m: usize,
    pub grid: Vec<usize>,
    pub scores: Vec<f64>,
}

/// `CVLL(m) = (1/n) Σ_{j=1}^{⌊n/2⌋} [tr(I_{Z,j} f̂_{U,j,-j}^{-1}) + log det f̂_{U,j,-j}]`,
/// minimized over `grid`. Non-PD leave-out estimates score `+∞`; ties go
/// to the smallest `m`.
pub fn cvll_select(sample: &TimeSeriesSample, grid: &[usize]) -> Result<CvllSelection> {
    cvll_select_frame(&dft(sample), grid)
}

pub fn cvll_select_frame(frame: &FourierFrame, grid: &[usize]) -> Result<CvllSelection> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let n = frame.n();
    let mut scores = Vec::with_capacity(grid.len());
    for &m in grid {
        let mut total = 0.0;
        for j in 1..=(n / 2) as i64 {
            let f = leave_out_estimate(frame, j, m)?;
            if !is_positive_definite(&f, PD_TOL) {
                total = f64::INFINITY;
                break;
            }
            let Ok(chol) = Cholesky::new(&f) else {
                total = f64::INFINITY;
                break;
            };
            // tr(W W^H F^{-1}) = ‖L^{-1} W‖².
            let quad: f64 = chol.solve_lower_vec(frame.vector(j)).iter().map(|z| z.norm_sqr()).sum();
            total += quad + chol.logdet();
        }
        scores.push(total / n as f64);
    }
    let mut best = 0;
    for i in 1..grid.len() {
        let better = scores[i] < scores[best] || (scores[i] == scores[best] && grid[i] < grid[best]);
        if better {
            best = i;
        }
    }
    Ok(CvllSelection { m: grid[best], grid: grid.to_vec(), scores })
}

/// Even `m` with `max(r, ⌈n^0.4⌉) ≤ m ≤ ⌊n^0.8⌋` and `m < n/2`.
pub fn default_cvll_grid(n: usize, r: usize) -> Vec<usize> {
    let nf = n as f64;
    let mut lo = r.max(nf.powf(0.4).ceil() as usize).max(2);
    lo += lo % 2;
    let hi = (nf.powf(0.8).floor() as usize).min((n - 1) / 2);
    (lo..=hi).step_by(2).filter(|m| 2 * m < n).collect()
}
