//! Discrepancy statistics, their standardization and the test decision.
//!
//! With `M_t = f̂_{U,t} f̂_{R,t}^{-1}`:
//!
//! - full: `T_n = Σ_{t=1}^{⌊n/2⌋} K(M_t)`
//! - quadratic: `T_{Q,n} = ½ Σ_t tr[(M_t − I)²]`
//! - block: `T_n* = Σ_{t=1}^{L} K(M_{(t−1)(m+1)+m/2+1})`, `L = ⌊⌊n/2⌋/(m+1)⌋`
//! - weighted: `T_{n,φ} = Σ_t φ(λ_t) K(M_t)`
//!
//! and `T̂ = √(m/n)(T − (n/m)cη̂)/(cσ̂)`, or for the block form
//! `T̂* = (m/√L)(T* − (2L/m)cη̂)/(√(B_u/D_u) cσ̂)`, where `c` is the
//! curvature of `K`. The test rejects for large `T̂`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::constraints::{
    derivatives, estimate_theta, eta_sigma_closed, eta_sigma_generic, restricted_estimate, EtaSigma,
    HypothesisModel, Theta,
};
use crate::divergence::{curvature, discrepancy, DiscrepancyKind};
use crate::error::{Error, Result};
use crate::hermcore::relative_eigenvalues;
use crate::io::fmt_sig;
use crate::spectra::{
    cvll_select_frame, default_cvll_grid, dft, smooth_frame, KernelConstants, KernelShape, SpectralSequence,
    TimeSeriesSample, WeightKernel,
};

/// Nonnegative frequency weight `φ(λ)` on `[0, π]`.
#[derive(Clone)]
pub struct FrequencyWeight {
    name: String,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl FrequencyWeight {
    pub fn new(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), f: Arc::new(f) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, lambda: f64) -> Result<f64> {
        let w = (self.f)(lambda);
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "weight '{}' is {w} at frequency {lambda}",
                self.name
            )));
        }
        Ok(w)
    }
}

impl fmt::Debug for FrequencyWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("FrequencyWeight").field(&self.name).finish()
    }
}

#[derive(Debug, Clone)]
pub enum StatisticForm {
    Full,
    Quadratic,
    Block,
    Weighted(FrequencyWeight),
}

impl StatisticForm {
    pub fn label(&self) -> String {
        match self {
            Self::Full => "full".into(),
            Self::Quadratic => "quadratic".into(),
            Self::Block => "block".into(),
            Self::Weighted(w) => format!("weighted({})", w.name()),
        }
    }

    /// Parses `full`, `quadratic` or `block`.
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Self::Full),
            "quadratic" | "q" => Ok(Self::Quadratic),
            "block" => Ok(Self::Block),
            other => Err(Error::InvalidConfig(format!(
                "unknown statistic '{other}', expected full, quadratic or block"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StatisticVariant {
    pub form: StatisticForm,
    /// Ignored by the quadratic form.
    pub kind: DiscrepancyKind,
}

impl StatisticVariant {
    pub fn new(form: StatisticForm, kind: DiscrepancyKind) -> Self {
        Self { form, kind }
    }

    pub fn full(kind: DiscrepancyKind) -> Self {
        Self::new(StatisticForm::Full, kind)
    }

    pub fn quadratic() -> Self {
        Self::new(StatisticForm::Quadratic, DiscrepancyKind::Quadratic)
    }

    pub fn block(kind: DiscrepancyKind) -> Self {
        Self::new(StatisticForm::Block, kind)
    }

    fn effective_kind(&self) -> DiscrepancyKind {
        match self.form {
            StatisticForm::Quadratic => DiscrepancyKind::Quadratic,
            _ => self.kind,
        }
    }

    /// `c` used for rescaling `η̂`, `σ̂`.
    pub fn curvature(&self) -> f64 {
        curvature(self.effective_kind())
    }

    pub fn label(&self) -> String {
        match self.form {
            StatisticForm::Quadratic => self.form.label(),
            _ => format!("{}:{}", self.form.label(), self.kind.label()),
        }
    }
}

/// Block indices `(t−1)(m+1) + m/2 + 1`, `t = 1..=L`.
pub fn block_indices(n: usize, m: usize) -> Vec<usize> {
    let l = (n / 2) / (m + 1);
    (1..=l).map(|t| (t - 1) * (m + 1) + m / 2 + 1).collect()
}

/// Eigenvalues of `M_t` at each `t = 1..=⌊n/2⌋`, `None` where either
/// estimate is not PD.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeSpectrum {
    n: usize,
    eigs: Vec<Option<Vec<f64>>>,
}

impl RelativeSpectrum {
    pub fn new(fu: &SpectralSequence, fr: &SpectralSequence) -> Result<Self> {
        if fu.n() != fr.n() || fu.r() != fr.r() || fu.half() != fr.half() {
            return Err(Error::AlignmentMismatch(format!(
                "unrestricted (n = {}, r = {}) vs restricted (n = {}, r = {})",
                fu.n(),
                fu.r(),
                fr.n(),
                fr.r()
            )));
        }
        let eigs = (1..=fu.half())
            .map(|t| {
                if !fu.is_pd(t) || !fr.is_pd(t) {
                    return None;
                }
                relative_eigenvalues(fu.at(t), fr.at(t))
                    .ok()
                    .filter(|e| e.iter().all(|&x| x > 0.0))
            })
            .collect();
        Ok(Self { n: fu.n(), eigs })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Eigenvalues at 1-based `t`.
    pub fn at(&self, t: usize) -> Option<&[f64]> {
        self.eigs[t - 1].as_deref()
    }

    pub fn nonpd_count(&self) -> usize {
        self.eigs.iter().filter(|e| e.is_none()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawStatistic {
    pub value: f64,
    /// Indices that were skipped because an estimate was not PD.
    pub nonpd_count: usize,
}

/// `T`, summing in index order. `m` is only read by the block form.
pub fn raw_from_spectrum(spec: &RelativeSpectrum, variant: &StatisticVariant, m: usize) -> Result<RawStatistic> {
    let kind = variant.effective_kind();
    let half = spec.n / 2;
    let indices: Vec<usize> = match variant.form {
        StatisticForm::Block => block_indices(spec.n, m),
        _ => (1..=half).collect(),
    };
    let mut value = 0.0;
    let mut nonpd_count = 0;
    for t in indices {
        let Some(eigs) = spec.at(t) else {
            nonpd_count += 1;
            continue;
        };
        let k = discrepancy(kind, eigs)?;
        value += match &variant.form {
            StatisticForm::Weighted(w) => w.eval(2.0 * std::f64::consts::PI * t as f64 / spec.n as f64)? * k,
            _ => k,
        };
    }
    Ok(RawStatistic { value, nonpd_count })
}

pub fn raw_statistic(
    fu: &SpectralSequence,
    fr: &SpectralSequence,
    variant: &StatisticVariant,
    m: usize,
) -> Result<RawStatistic> {
    raw_from_spectrum(&RelativeSpectrum::new(fu, fr)?, variant, m)
}

/// `T̂` from `T`, with `η̂_K = cη̂` and `σ̂_K = c√σ̂²`.
pub fn standardize(
    raw: f64,
    n: usize,
    m: usize,
    es: EtaSigma,
    c: f64,
    form: &StatisticForm,
    constants: KernelConstants,
) -> Result<f64> {
    if !(es.sigma2 > 0.0) {
        return Err(Error::DegenerateVariance(es.sigma2));
    }
    if !(c > 0.0) {
        return Err(Error::InvalidDiscrepancy(format!("curvature {c} must be positive")));
    }
    let (nf, mf) = (n as f64, m as f64);
    let eta = c * es.eta;
    let sigma = c * es.sigma2.sqrt();
    match form {
        StatisticForm::Block => {
            let l = (n / 2) / (m + 1);
            if l == 0 {
                return Err(Error::NoBlocks { n, m });
            }
            let lf = l as f64;
            let deflator = (constants.bu / constants.du).sqrt();
            Ok(mf / lf.sqrt() * (raw - 2.0 * lf / mf * eta) / (deflator * sigma))
        }
        _ => Ok((mf / nf).sqrt() * (raw - nf / mf * eta) / sigma),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub p_value: f64,
    pub reject: bool,
    pub critical_value: f64,
}

/// Upper-tail critical value `Φ^{-1}(1 − α)`.
pub fn critical_value(alpha_level: f64) -> Result<f64> {
    if !(alpha_level > 0.0 && alpha_level < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha level {alpha_level} must lie in (0, 1)")));
    }
    Ok(standard_normal().inverse_cdf(1.0 - alpha_level))
}

fn standard_normal() -> Normal {
    Normal::standard()
}

/// One-sided decision; `forced` rejects with `p = 0`.
pub fn decide(standardized: f64, alpha_level: f64, forced: bool) -> Result<Decision> {
    let critical_value = critical_value(alpha_level)?;
    if forced {
        return Ok(Decision { p_value: 0.0, reject: true, critical_value });
    }
    let p_value = standard_normal().sf(standardized).clamp(0.0, 1.0);
    Ok(Decision { p_value, reject: standardized > critical_value, critical_value })
}

/// `η̂`, `σ̂²` for a kernel and an optional weight.
///
/// The built-in maps have frequency-independent integrands, so their
/// values are the flat-kernel closed forms rescaled by `C_u/½` and
/// `D_u/⅓`, and by the grid means of `φ` and `φ²`. Custom maps go
/// through the generic engine on the restricted grid.
pub fn eta_sigma_for(
    model: &HypothesisModel,
    theta: &Theta,
    fr: &SpectralSequence,
    constants: KernelConstants,
    weight: Option<&FrequencyWeight>,
) -> Result<EtaSigma> {
    if let HypothesisModel::Custom(_) = model {
        let provider = |y: &crate::hermcore::HermitianMatrix| {
            derivatives(model, theta, y)
                .ok()
                .flatten()
                .unwrap_or_default()
        };
        let phi = |l: f64| weight.map_or(1.0, |w| w.eval(l).unwrap_or(f64::NAN));
        return eta_sigma_generic(fr, provider, constants, weight.map(|_| &phi as &dyn Fn(f64) -> f64));
    }
    let base = eta_sigma_closed(model, theta, fr.r())?;
    let (mut w1, mut w2) = (1.0, 1.0);
    if let Some(w) = weight {
        let half = fr.half();
        let (mut s1, mut s2) = (0.0, 0.0);
        for t in 1..=half {
            let v = w.eval(fr.frequency(t))?;
            s1 += v;
            s2 += v * v;
        }
        w1 = s1 / half as f64;
        w2 = s2 / half as f64;
    }
    EtaSigma::new(base.eta * constants.cu / 0.5 * w1, base.sigma2 * constants.du * 3.0 * w2)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Bandwidth {
    Fixed(usize),
    /// CVLL over the given grid, or the default grid when `None`.
    Cvll(Option<Vec<usize>>),
}

#[derive(Debug, Clone)]
pub struct TestConfig {
    pub model: HypothesisModel,
    pub kernel: KernelShape,
    pub bandwidth: Bandwidth,
    pub alpha_level: f64,
}

impl TestConfig {
    pub fn new(model: HypothesisModel, bandwidth: Bandwidth) -> Self {
        Self { model, kernel: KernelShape::Flat, bandwidth, alpha_level: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub hypothesis: String,
    pub statistic: String,
    pub kernel: String,
    pub bandwidth_selection: String,
    pub n: usize,
    pub r: usize,
    pub m: usize,
    pub raw: f64,
    pub eta_hat: f64,
    pub sigma2_hat: f64,
    pub curvature: f64,
    pub standardized: f64,
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha_level: f64,
    pub nonpd_count: usize,
    pub forced_reject: bool,
}

impl TestReport {
    /// `REJECT/RETAIN, T̂ = …, p = …, m = …`.
    pub fn summary_line(&self) -> String {
        format!(
            "{}, T̂ = {}, p = {}, m = {}{}",
            if self.reject { "REJECT" } else { "RETAIN" },
            fmt_sig(self.standardized),
            fmt_sig(self.p_value),
            self.m,
            if self.forced_reject {
                format!(" (forced: {} non-PD frequencies)", self.nonpd_count)
            } else {
                String::new()
            }
        )
    }
}

/// Everything shared by the variants of one test on one sample.
#[derive(Debug, Clone)]
pub struct FittedPipeline {
    pub m: usize,
    pub bandwidth_selection: String,
    pub kernel: WeightKernel,
    pub theta: Theta,
    pub unrestricted: SpectralSequence,
    pub restricted: SpectralSequence,
    pub spectrum: RelativeSpectrum,
}

pub fn fit_pipeline(sample: &TimeSeriesSample, config: &TestConfig) -> Result<FittedPipeline> {
    config.model.validate(sample.r())?;
    let frame = dft(sample);
    let (m, selection) = match &config.bandwidth {
        Bandwidth::Fixed(m) => (*m, "fixed".to_string()),
        Bandwidth::Cvll(grid) => {
            let grid = grid.clone().unwrap_or_else(|| default_cvll_grid(sample.n(), sample.r()));
            (cvll_select_frame(&frame, &grid)?.m, "cvll".to_string())
        }
    };
    let kernel = WeightKernel::new(config.kernel, m)?;
    let unrestricted = smooth_frame(&frame, &kernel)?;
    let theta = estimate_theta(&config.model, sample)?;
    let restricted = restricted_estimate(&config.model, &unrestricted, &theta)?;
    let spectrum = RelativeSpectrum::new(&unrestricted, &restricted)?;
    Ok(FittedPipeline { m, bandwidth_selection: selection, kernel, theta, unrestricted, restricted, spectrum })
}

/// Evaluates a fitted pipeline under one statistic variant.
pub fn report_for(
    fitted: &FittedPipeline,
    config: &TestConfig,
    variant: &StatisticVariant,
) -> Result<TestReport> {
    let n = fitted.unrestricted.n();
    let m = fitted.m;
    let constants = fitted.kernel.constants();
    let weight = match &variant.form {
        StatisticForm::Weighted(w) => Some(w),
        _ => None,
    };
    let es = eta_sigma_for(&config.model, &fitted.theta, &fitted.restricted, constants, weight)?;
    let raw = raw_from_spectrum(&fitted.spectrum, variant, m)?;
    let c = variant.curvature();
    let standardized = standardize(raw.value, n, m, es, c, &variant.form, constants)?;
    let forced = raw.nonpd_count > 0;
    let decision = decide(standardized, config.alpha_level, forced)?;
    Ok(TestReport {
        hypothesis: config.model.name(),
        statistic: variant.label(),
        kernel: config.kernel.name().into(),
        bandwidth_selection: fitted.bandwidth_selection.clone(),
        n,
        r: fitted.unrestricted.r(),
        m,
        raw: raw.value,
        eta_hat: es.eta,
        sigma2_hat: es.sigma2,
        curvature: c,
        standardized,
        critical_value: decision.critical_value,
        p_value: decision.p_value,
        reject: decision.reject,
        alpha_level: config.alpha_level,
        nonpd_count: raw.nonpd_count,
        forced_reject: forced,
    })
}

/// One fit, several statistics.
pub fn evaluate_variants(
    sample: &TimeSeriesSample,
    config: &TestConfig,
    variants: &[StatisticVariant],
) -> Result<Vec<TestReport>> {
    let fitted = fit_pipeline(sample, config)?;
    variants.iter().map(|v| report_for(&fitted, config, v)).collect()
}

pub fn run_test(sample: &TimeSeriesSample, config: &TestConfig, variant: &StatisticVariant) -> Result<TestReport> {
    let fitted = fit_pipeline(sample, config)?;
    report_for(&fitted, config, variant)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermcore::HermitianMatrix;
    use crate::spectra::SpectralKind;

    fn scalar_seq(n: usize, vals: impl Fn(usize) -> f64, kind: SpectralKind) -> SpectralSequence {
        let mats = (1..=n / 2).map(|t| HermitianMatrix::from_diagonal(&[vals(t)])).collect();
        SpectralSequence::new(n, kind, mats).unwrap()
    }

    #[test]
    fn block_index_arithmetic() {
        assert_eq!(block_indices(101, 16), vec![9, 26]);
        assert_eq!(block_indices(201, 30), vec![16, 47, 78]);
        assert!(block_indices(20, 10).is_empty());
    }

    #[test]
    fn scalar_ratio_two() {
        let fr = scalar_seq(101, |t| 1.0 + 0.01 * t as f64, SpectralKind::Restricted);
        let fu = fr.scaled(2.0);
        let raw = raw_statistic(&fu, &fr, &StatisticVariant::full(DiscrepancyKind::KullbackLeibler), 16).unwrap();
        assert!((raw.value - 50.0 * (1.0 - 2f64.ln())).abs() < 1e-10);
        assert!((raw.value - 15.3426).abs() < 1e-4);
        assert_eq!(raw.nonpd_count, 0);
    }

    #[test]
    fn equal_sequences_give_zero() {
        let fr = scalar_seq(64, |t| 0.5 + t as f64, SpectralKind::Restricted);
        for v in [
            StatisticVariant::full(DiscrepancyKind::JDivergence),
            StatisticVariant::quadratic(),
            StatisticVariant::block(DiscrepancyKind::KullbackLeibler),
            StatisticVariant::new(
                StatisticForm::Weighted(FrequencyWeight::new("cos", |l| 1.0 + l.cos())),
                DiscrepancyKind::chernoff(0.3).unwrap(),
            ),
        ] {
            assert!(raw_statistic(&fr, &fr, &v, 8).unwrap().value < 1e-24);
        }
    }

    #[test]
    fn misaligned_sequences() {
        let a = scalar_seq(64, |_| 1.0, SpectralKind::Restricted);
        let b = scalar_seq(66, |_| 1.0, SpectralKind::Restricted);
        assert!(matches!(
            raw_statistic(&a, &b, &StatisticVariant::quadratic(), 8),
            Err(Error::AlignmentMismatch(_))
        ));
    }

    #[test]
    fn nonpd_indices_are_counted() {
        let fu = scalar_seq(20, |_| 1.0, SpectralKind::Unrestricted);
        let fr = scalar_seq(20, |t| if t == 3 { -1.0 } else { 1.0 }, SpectralKind::Restricted);
        let raw = raw_statistic(&fu, &fr, &StatisticVariant::full(DiscrepancyKind::KullbackLeibler), 4).unwrap();
        assert_eq!((raw.value, raw.nonpd_count), (0.0, 1));
    }

    #[test]
    fn standardize_examples() {
        let es = EtaSigma::new(1.5, 1.0).unwrap();
        let k = KernelShape::Flat.constants();
        let z = standardize(12.5, 1001, 120, es, 1.0, &StatisticForm::Full, k).unwrap();
        let expected = (120.0f64 / 1001.0).sqrt() * (12.5 - 1001.0 / 120.0 * 1.5);
        assert!((z - expected).abs() < 1e-15);
        assert!((z + 0.00433).abs() < 1e-5);
        let centred = standardize(1001.0 / 120.0 * 2.0 * 1.5, 1001, 120, es, 2.0, &StatisticForm::Full, k).unwrap();
        assert!(centred.abs() < 1e-12);
        assert!(((k.bu / k.du).sqrt() - 3f64.sqrt()).abs() < 1e-8);
        // Block: L = 2 for (101, 16), centering 2Lη/m.
        let b = standardize(2.0 * 2.0 / 16.0 * 1.5, 101, 16, es, 1.0, &StatisticForm::Block, k).unwrap();
        assert!(b.abs() < 1e-12);
        assert!(matches!(
            standardize(1.0, 20, 10, es, 1.0, &StatisticForm::Block, k),
            Err(Error::NoBlocks { .. })
        ));
        let bad = EtaSigma { eta: 1.0, sigma2: 0.0 };
        assert!(matches!(
            standardize(1.0, 101, 16, bad, 1.0, &StatisticForm::Full, k),
            Err(Error::DegenerateVariance(_))
        ));
    }

    #[test]
    fn decisions() {
        let d = decide(0.0, 0.05, false).unwrap();
        assert!((d.p_value - 0.5).abs() < 1e-15 && !d.reject);
        assert!((d.critical_value - 1.6448536269514722).abs() < 1e-9);
        let f = decide(-3.0, 0.05, true).unwrap();
        assert_eq!((f.p_value, f.reject), (0.0, true));
        assert!(decide(2.0, 0.05, false).unwrap().reject);
        assert!((decide(1.959963984540054, 0.05, false).unwrap().p_value - 0.025).abs() < 1e-10);
        assert!(decide(0.0, 1.0, false).is_err());
    }

    #[test]
    fn variant_labels() {
        assert_eq!(StatisticVariant::quadratic().label(), "quadratic");
        assert_eq!(StatisticVariant::block(DiscrepancyKind::JDivergence).label(), "block:j");
        assert_eq!(StatisticVariant::quadratic().curvature(), 1.0);
        assert!(StatisticForm::parse("weighted").is_err());
    }
}
