//! Gaussian VAR(1) simulation and Monte Carlo size/power studies.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::HypothesisModel;
use crate::error::{Error, Result};
use crate::hermcore::{Cholesky, HermitianMatrix};
use crate::spectra::{KernelShape, TimeSeriesSample, MIN_SAMPLE_LEN};
use crate::statistics::{evaluate_variants, Bandwidth, StatisticVariant, TestConfig};

pub const DEFAULT_BURN_IN: usize = 1000;
/// Upper 5% point of the standard normal, used for empirical size.
pub const NOMINAL_CRITICAL: f64 = 1.6449;
pub const MIN_SUMMARY_REPLICATIONS: usize = 100;

/// `Z_t = A Z_{t−1} + ε_t`, `ε_t ~ N(0, Ω)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarOneProcess {
    r: usize,
    /// Row-major `A`.
    a: Vec<f64>,
    /// Row-major lower Cholesky factor of `Ω`.
    chol: Vec<f64>,
    spectral_radius: f64,
}

impl VarOneProcess {
    /// Identity innovation covariance.
    pub fn new(r: usize, a: Vec<f64>) -> Result<Self> {
        let mut eye = vec![0.0; r * r];
        for i in 0..r {
            eye[i * r + i] = 1.0;
        }
        Self::with_innovation_cov(r, a, &eye)
    }

    pub fn with_innovation_cov(r: usize, a: Vec<f64>, cov: &[f64]) -> Result<Self> {
        if r == 0 || a.len() != r * r || cov.len() != r * r {
            return Err(Error::DimensionMismatch(format!(
                "VAR(1) with r = {r} needs {0} coefficients and {0} covariance entries",
                r * r
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite VAR coefficient".into()));
        }
        let rho = DMatrix::from_row_slice(r, r, &a)
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if !(rho < 1.0) {
            return Err(Error::NonStationary(rho));
        }
        let l = Cholesky::new(&HermitianMatrix::from_real(r, cov)?)?;
        let chol = l.factor().as_slice().iter().map(|z| z.re).collect();
        Ok(Self { r, a, chol, spectral_radius: rho })
    }

    /// The trivariate design `((0.7, φ, 0), (0, −0.5, φ), (0, 0, 0.6))`;
    /// mutually independent components at `φ = 0`.
    pub fn trivariate_design(phi: f64) -> Result<Self> {
        Self::new(3, vec![0.7, phi, 0.0, 0.0, -0.5, phi, 0.0, 0.0, 0.6])
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.a
    }

    pub fn spectral_radius(&self) -> f64 {
        self.spectral_radius
    }
}

/// `burn_in + n` steps from `Z_0 = 0`, keeping the last `n`.
pub fn simulate_var1_with<R: Rng + ?Sized>(
    process: &VarOneProcess,
    n: usize,
    burn_in: usize,
    rng: &mut R,
) -> Result<TimeSeriesSample> {
    if n < MIN_SAMPLE_LEN {
        return Err(Error::InvalidSample(format!("n = {n} is below {MIN_SAMPLE_LEN}")));
    }
    let r = process.r;
    let mut z = vec![0.0; r];
    let mut next = vec![0.0; r];
    let mut eps = vec![0.0; r];
    let mut out = Vec::with_capacity(n * r);
    for step in 0..burn_in + n {
        for e in eps.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        for i in 0..r {
            let mut v = 0.0;
            for j in 0..r {
                v += process.a[i * r + j] * z[j];
            }
            for j in 0..=i {
                v += process.chol[i * r + j] * eps[j];
            }
            next[i] = v;
        }
        std::mem::swap(&mut z, &mut next);
        if step >= burn_in {
            out.extend_from_slice(&z);
        }
    }
    TimeSeriesSample::new(n, r, out)
}

pub fn simulate_var1(process: &VarOneProcess, n: usize, burn_in: usize, seed: u64) -> Result<TimeSeriesSample> {
    simulate_var1_with(process, n, burn_in, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Generator for replication `k`: stream `k` of the seed's ChaCha stream family.
pub fn replication_rng(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

#[derive(Debug, Clone)]
pub struct McConfig {
    pub process: VarOneProcess,
    pub n: usize,
    pub bandwidth: Bandwidth,
    pub model: HypothesisModel,
    pub kernel: KernelShape,
    pub variants: Vec<StatisticVariant>,
    pub replications: usize,
    pub seed: u64,
    pub burn_in: usize,
    pub alpha_level: f64,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    /// Column-mean removal before testing, as for observed data.
    pub demean: bool,
}

impl McConfig {
    pub fn new(process: VarOneProcess, n: usize, bandwidth: Bandwidth, model: HypothesisModel) -> Self {
        Self {
            process,
            n,
            bandwidth,
            model,
            kernel: KernelShape::Flat,
            variants: Vec::new(),
            replications: 1000,
            seed: 0,
            burn_in: DEFAULT_BURN_IN,
            alpha_level: 0.05,
            threads: None,
            demean: true,
        }
    }

    fn test_config(&self) -> TestConfig {
        TestConfig {
            model: self.model.clone(),
            kernel: self.kernel,
            bandwidth: self.bandwidth.clone(),
            alpha_level: self.alpha_level,
        }
    }

    fn bandwidth_label(&self) -> String {
        match self.bandwidth {
            Bandwidth::Fixed(m) => m.to_string(),
            Bandwidth::Cvll(_) => "cvll".into(),
        }
    }
}

/// One replication's outcome for one variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub standardized: f64,
    pub m: usize,
    pub forced: bool,
}

/// Runs the replications; `result[k][v]` is replication `k`, variant `v`.
/// The output does not depend on the thread count.
pub fn run_replications(config: &McConfig) -> Result<Vec<Vec<Draw>>> {
    if config.variants.is_empty() {
        return Err(Error::InvalidConfig("no statistic variants requested".into()));
    }
    if config.replications == 0 {
        return Err(Error::InvalidConfig("replications must be positive".into()));
    }
    let test = config.test_config();
    let one = |k: usize| -> Result<Vec<Draw>> {
        let mut rng = replication_rng(config.seed, k as u64);
        let mut sample = simulate_var1_with(&config.process, config.n, config.burn_in, &mut rng)?;
        if config.demean {
            sample = sample.demeaned();
        }
        let reports = evaluate_variants(&sample, &test, &config.variants)?;
        Ok(reports
            .iter()
            .map(|r| Draw { standardized: r.standardized, m: r.m, forced: r.forced_reject })
            .collect())
    };
    let run = || (0..config.replications).into_par_iter().map(one).collect::<Result<Vec<_>>>();
    match config.threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| Error::ThreadPool(e.to_string()))?
            .install(run),
        None => run(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    /// `1/(N−1)` normalization.
    pub variance: f64,
    pub skewness: f64,
    /// Non-excess; 3 for the normal law.
    pub kurtosis: f64,
}

pub fn moments(x: &[f64]) -> Moments {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2n, m3n, m4n) = (m2 / n, m3 / n, m4 / n);
    Moments {
        mean,
        variance: if x.len() > 1 { m2 / (n - 1.0) } else { f64::NAN },
        skewness: m3n / m2n.powf(1.5),
        kurtosis: m4n / (m2n * m2n),
    }
}

/// Linear-interpolation sample quantile (`x_(1 + (N−1)p)`).
pub fn quantile(x: &[f64], p: f64) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    if s.is_empty() {
        return f64::NAN;
    }
    let h = (s.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

/// One row of a size or power table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    /// Discrepancy label.
    pub variant: String,
    pub n: usize,
    /// Bandwidth, or `cvll`.
    pub m: String,
    /// Statistic form.
    pub stat: String,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub q95: f64,
    /// Empirical size against [`NOMINAL_CRITICAL`], or size-adjusted power.
    pub rate: f64,
    pub replications: usize,
    pub forced: usize,
    /// Mean selected bandwidth.
    pub mean_m: f64,
}

/// Forced rejections count as exceedances and are left out of the moments.
fn summarize(config: &McConfig, draws: &[Vec<Draw>], v: usize, critical: f64) -> McSummary {
    let column: Vec<Draw> = draws.iter().map(|d| d[v]).collect();
    let finite: Vec<f64> = column.iter().filter(|d| !d.forced).map(|d| d.standardized).collect();
    let mom = moments(&finite);
    let exceed = column.iter().filter(|d| d.forced || d.standardized > critical).count();
    let variant = &config.variants[v];
    McSummary {
        variant: match variant.form {
            crate::statistics::StatisticForm::Quadratic => "quadratic".into(),
            _ => variant.kind.label(),
        },
        n: config.n,
        m: config.bandwidth_label(),
        stat: variant.form.label(),
        mean: mom.mean,
        variance: mom.variance,
        skewness: mom.skewness,
        kurtosis: mom.kurtosis,
        q95: quantile(&finite, 0.95),
        rate: exceed as f64 / column.len() as f64,
        replications: column.len(),
        forced: column.len() - finite.len(),
        mean_m: column.iter().map(|d| d.m as f64).sum::<f64>() / column.len() as f64,
    }
}

fn check_summary_size(config: &McConfig) -> Result<()> {
    if config.replications < MIN_SUMMARY_REPLICATIONS {
        return Err(Error::InvalidConfig(format!(
            "summaries need at least {MIN_SUMMARY_REPLICATIONS} replications, got {}",
            config.replications
        )));
    }
    Ok(())
}

/// Table-1 summaries, one per variant.
pub fn null_summary(config: &McConfig) -> Result<Vec<McSummary>> {
    check_summary_size(config)?;
    let draws = run_replications(config)?;
    Ok((0..config.variants.len()).map(|v| summarize(config, &draws, v, NOMINAL_CRITICAL)).collect())
}

/// Size-adjusted power: the critical value is the empirical 95% quantile
/// under `null_config`. Rows describe the alternative.
pub fn size_adjusted_power(null_config: &McConfig, alt_config: &McConfig) -> Result<Vec<McSummary>> {
    check_summary_size(null_config)?;
    check_summary_size(alt_config)?;
    let labels = |c: &McConfig| c.variants.iter().map(StatisticVariant::label).collect::<Vec<_>>();
    if labels(null_config) != labels(alt_config) || null_config.n != alt_config.n {
        return Err(Error::InvalidConfig("null and alternative configs must share n and variants".into()));
    }
    let null_draws = run_replications(null_config)?;
    let alt_draws = run_replications(alt_config)?;
    Ok((0..alt_config.variants.len())
        .map(|v| {
            let null_values: Vec<f64> = null_draws.iter().map(|d| &d[v]).filter(|d| !d.forced).map(|d| d.standardized).collect();
            let critical = quantile(&null_values, 0.95);
            summarize(alt_config, &alt_draws, v, critical)
        })
        .collect())
}
