//! Discrepancy functionals `K(A)` evaluated on the relative spectrum of
//! `A = f̂_U f̂_R^{-1}`.
//!
//! All four functionals vanish exactly at the unit spectrum and agree to
//! second order up to a scalar curvature `c`; the statistics layer uses
//! `c` to rescale the centering and scaling constants.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default Chernoff mixing parameter.
pub const DEFAULT_CHERNOFF_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DiscrepancyKind {
    /// `tr(A) − log det(A) − r`.
    KullbackLeibler,
    /// `K_I(A) + K_I(A^{-1})`.
    JDivergence,
    /// `log det(αA + (1 − α)I) − α log det(A)`.
    Chernoff { alpha: f64 },
    /// `½ tr[(A − I)²]`.
    Quadratic,
}

impl DiscrepancyKind {
    pub fn chernoff(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidDiscrepancy(format!(
                "Chernoff alpha must lie in (0, 1), got {alpha}"
            )));
        }
        Ok(Self::Chernoff { alpha })
    }

    pub fn label(&self) -> String {
        match self {
            Self::KullbackLeibler => "kl".into(),
            Self::JDivergence => "j".into(),
            Self::Chernoff { alpha } => format!("chernoff({alpha})"),
            Self::Quadratic => "quadratic".into(),
        }
    }
}

impl fmt::Display for DiscrepancyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for DiscrepancyKind {
    type Err = Error;
    /// `kl`, `j`, `quadratic`, `chernoff` (α = 0.5) or `chernoff:<α>`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "kl" | "kullback-leibler" => Ok(Self::KullbackLeibler),
            "j" | "jdiv" | "j-divergence" => Ok(Self::JDivergence),
            "quadratic" | "q" => Ok(Self::Quadratic),
            "chernoff" => Self::chernoff(DEFAULT_CHERNOFF_ALPHA),
            other => match other.strip_prefix("chernoff:") {
                Some(a) => Self::chernoff(a.parse().map_err(|_| {
                    Error::InvalidDiscrepancy(format!("bad Chernoff alpha '{a}'"))
                })?),
                None => Err(Error::InvalidDiscrepancy(format!("unknown discrepancy '{s}'"))),
            },
        }
    }
}

/// Evaluates `K` on the eigenvalues of `A`.
pub fn discrepancy(kind: DiscrepancyKind, eigs: &[f64]) -> Result<f64> {
    if let Some(&bad) = eigs.iter().find(|&&e| !(e > 0.0) || !e.is_finite()) {
        return Err(Error::NonPositiveEigenvalue(bad));
    }
    // Written in terms of x = λ − 1 with ln_1p to keep accuracy near the unit spectrum.
    let value = match kind {
        DiscrepancyKind::KullbackLeibler => eigs.iter().map(|&e| kl_term(e - 1.0)).sum(),
        DiscrepancyKind::JDivergence => eigs.iter().map(|&e| kl_term(e - 1.0) + kl_term(1.0 / e - 1.0)).sum(),
        DiscrepancyKind::Chernoff { alpha } => {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::InvalidDiscrepancy(format!("Chernoff alpha {alpha}")));
            }
            eigs.iter()
                .map(|&e| {
                    let x = e - 1.0;
                    (alpha * x).ln_1p() - alpha * x.ln_1p()
                })
                .sum()
        }
        DiscrepancyKind::Quadratic => 0.5 * eigs.iter().map(|&e| (e - 1.0).powi(2)).sum::<f64>(),
    };
    Ok(f64::max(value, 0.0))
}

fn kl_term(x: f64) -> f64 {
    x - x.ln_1p()
}

/// Second-order scale `c` relative to the KL curvature.
pub fn curvature(kind: DiscrepancyKind) -> f64 {
    match kind {
        DiscrepancyKind::KullbackLeibler | DiscrepancyKind::Quadratic => 1.0,
        DiscrepancyKind::JDivergence => 2.0,
        DiscrepancyKind::Chernoff { alpha } => alpha * (1.0 - alpha),
    }
}
