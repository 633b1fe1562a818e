//! Likelihood-ratio scoring over logit-scaled confidences.

use std::f64::consts::{PI, SQRT_2};

use libm::erfc;

use crate::error::{Error, Result};

/// Default clamp applied to confidences before logit scaling.
pub const CONFIDENCE_CLAMP: f64 = 1e-6;
/// Default lower bound on fitted standard deviations.
pub const SIGMA_FLOOR: f64 = 1e-4;

/// `φ(f) = log(f' / (1 - f'))` with `f' = clamp(f, δ, 1 - δ)`.
pub fn scale_confidence(f: f64, delta: f64) -> f64 {
    let f = f.clamp(delta, 1.0 - delta);
    f.ln() - (-f).ln_1p()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianStats {
    pub mean: f64,
    pub std: f64,
}

impl GaussianStats {
    pub fn log_pdf(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.std;
        -0.5 * z * z - self.std.ln() - 0.5 * (2.0 * PI).ln()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.log_pdf(x).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        0.5 * erfc(-(x - self.mean) / (self.std * SQRT_2))
    }
}

/// Mean and population standard deviation, the latter floored at `sigma_floor`.
pub fn fit_gaussian(scores: &[f64], sigma_floor: f64) -> Result<GaussianStats> {
    if scores.is_empty() {
        return Err(Error::Empty("gaussian fit over zero scores"));
    }
    if !(sigma_floor > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sigma floor must be positive, got {sigma_floor}"
        )));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    Ok(GaussianStats {
        mean,
        std: var.sqrt().max(sigma_floor),
    })
}

/// `p(conf | N_in) / p(conf | N_out)`, held in log space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodRatio {
    pub log_ratio: f64,
}

impl LikelihoodRatio {
    pub fn ratio(&self) -> f64 {
        self.log_ratio.exp()
    }
}

pub fn lira_online_score(conf: f64, in_stats: &GaussianStats, out_stats: &GaussianStats) -> LikelihoodRatio {
    LikelihoodRatio {
        log_ratio: in_stats.log_pdf(conf) - out_stats.log_pdf(conf),
    }
}

/// One-sided test against the OUT fit: `Φ((conf - μ_out) / σ_out)`.
pub fn lira_offline_score(conf: f64, out_stats: &GaussianStats) -> f64 {
    out_stats.cdf(conf)
}

/// `1 - p(conf | N_out)` read as a density. Not monotone in `conf`.
pub fn lira_offline_density_score(conf: f64, out_stats: &GaussianStats) -> f64 {
    1.0 - out_stats.pdf(conf)
}

/// Arithmetic mean of per-query scores.
pub fn ensemble_scores(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("ensemble over zero queries"));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaling_examples() {
        assert_eq!(scale_confidence(0.5, CONFIDENCE_CLAMP), 0.0);
        assert!((scale_confidence(0.9, CONFIDENCE_CLAMP) - 9f64.ln()).abs() < 1e-12);
        let top = scale_confidence(1.0, 1e-6);
        assert!((top - ((1.0 - 1e-6) / 1e-6f64).ln()).abs() < 1e-9);
        assert!((top - 13.815509).abs() < 1e-6);
        assert!((scale_confidence(0.0, 1e-6) + top).abs() < 1e-9);
    }

    #[test]
    fn fit_examples() {
        let g = fit_gaussian(&[1.0, 1.0, 1.0], SIGMA_FLOOR).unwrap();
        assert_eq!((g.mean, g.std), (1.0, SIGMA_FLOOR));
        let g = fit_gaussian(&[0.0, 2.0], SIGMA_FLOOR).unwrap();
        assert_eq!((g.mean, g.std), (1.0, 1.0));
        assert!(matches!(fit_gaussian(&[], SIGMA_FLOOR), Err(Error::Empty(_))));
    }

    #[test]
    fn online_examples() {
        let a = GaussianStats { mean: 0.3, std: 2.0 };
        assert_eq!(lira_online_score(-4.0, &a, &a).ratio(), 1.0);
        let inn = GaussianStats { mean: 1.0, std: 1.0 };
        let out = GaussianStats { mean: -1.0, std: 1.0 };
        assert!((lira_online_score(1.0, &inn, &out).ratio() - 2f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn offline_examples() {
        let out = GaussianStats { mean: 0.7, std: 1.5 };
        assert!((lira_offline_score(0.7, &out) - 0.5).abs() < 1e-15);
        assert!((lira_offline_score(2.2, &out) - 0.841_344_746_068_542_9).abs() < 1e-12);
        assert_eq!(lira_offline_score(f64::INFINITY, &out), 1.0);
        assert_eq!(lira_offline_score(1e6, &out), 1.0);
    }

    #[test]
    fn ensemble_examples() {
        assert_eq!(ensemble_scores(&[0.25; 4]).unwrap(), 0.25);
        assert_eq!(ensemble_scores(&[0.0, 1.0]).unwrap(), 0.5);
        assert!(ensemble_scores(&[]).is_err());
    }
}
