//! Statistical primitives behind the provenance decision rule.
//!
//! The decision rule asks whether the suspect's mean per-batch statistic is a
//! one-sided outlier of the shadow model's per-batch statistics. That needs a
//! Student-t quantile (for the critical value), the Grubbs statistic itself,
//! and — for the entropy and similarity decision variants — Shannon entropy of
//! predicted logits and pairwise cosine similarity.
//!
//! The t quantile is computed by inverting the CDF written in terms of the
//! regularized incomplete beta function, with bracketed bisection on the CDF
//! residual (tolerance 1e-10). No special-function crate is assumed.
//!
//! All functions here are pure; they can be called concurrently without any
//! synchronization.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Significance level for the one-sided Grubbs test.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SignificanceConfig {
    /// Probability of flagging an outlier in a clean reference set.
    pub alpha: f64,
}

impl Default for SignificanceConfig {
    fn default() -> Self {
        Self { alpha: 0.05 }
    }
}

impl SignificanceConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha <= 0.0 || alpha >= 1.0 {
            return Err(Error::InvalidAlpha(alpha));
        }
        Ok(Self { alpha })
    }

    fn validate(&self) -> Result<()> {
        Self::new(self.alpha).map(|_| ())
    }
}

/// Which side of the reference distribution counts as extreme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Candidate is suspiciously far *below* the reference mean.
    Low,
    /// Candidate is suspiciously far *above* the reference mean.
    High,
}

/// Outcome of a one-sided Grubbs test.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GrubbsResult {
    /// Test statistic: distance of the candidate from the reference mean in
    /// units of the reference sample standard deviation, signed toward the
    /// tested direction.
    pub g: f64,
    /// Critical value the statistic is compared against.
    pub g0: f64,
    /// Size of the reference set.
    pub n: usize,
    /// True iff `g > g0`.
    pub is_outlier: bool,
    pub direction: Direction,
}

/// Arithmetic mean. Empty input yields NaN; callers guard for it.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation with the (n - 1) denominator.
pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    (ss / (n - 1) as f64).sqrt()
}

const LN_SQRT_TWO_PI: f64 = 0.918_938_533_204_672_7;

/// Natural log of the gamma function (Lanczos approximation, g = 7).
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection formula keeps the approximation on the right half-plane.
        let pi = std::f64::consts::PI;
        pi.ln() - (pi * x).sin().abs().ln() - ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let mut acc = COEF[0];
        for (i, &c) in COEF.iter().enumerate().skip(1) {
            acc += c / (x + i as f64);
        }
        let t = x + 7.5;
        LN_SQRT_TWO_PI + (x + 0.5) * t.ln() - t + acc.ln()
    }
}

/// Continued-fraction kernel for the incomplete beta function
/// (modified Lentz iteration).
fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const MAX_ITER: usize = 400;
    const EPS: f64 = 3e-16;
    const FPMIN: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let mf = m as f64;
        let m2 = 2.0 * mf;

        let aa = mf * (b - mf) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;

        let aa = -(a + mf) * (qab + mf) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() <= EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
fn reg_inc_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front =
        ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    // Use the symmetry relation so the continued fraction converges fast.
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

/// CDF of the standard Student-t distribution with `df` degrees of freedom.
pub fn t_cdf(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    let tail = 0.5 * reg_inc_beta(x, 0.5 * df, 0.5);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Quantile of the standard Student-t distribution.
///
/// Returns `x` with `t_cdf(x, df) = p`, antisymmetric around `p = 0.5`.
pub fn t_quantile(p: f64, df: f64) -> Result<f64> {
    if !p.is_finite() || p <= 0.0 || p >= 1.0 {
        return Err(Error::ProbabilityOutOfRange(p));
    }
    if !df.is_finite() || df <= 0.0 {
        return Err(Error::InvalidDegreesOfFreedom(df));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    // Solve on the upper tail and mirror; this makes the result antisymmetric
    // in p by construction.
    let (target, negate) = if p > 0.5 { (p, false) } else { (1.0 - p, true) };

    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    while t_cdf(hi, df) < target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            break;
        }
    }
    let mut q = 0.5 * (lo + hi);
    for _ in 0..160 {
        q = 0.5 * (lo + hi);
        let residual = t_cdf(q, df) - target;
        if residual.abs() <= 1e-10 && (hi - lo) <= 1e-9 * q.max(1.0) {
            break;
        }
        if residual < 0.0 {
            lo = q;
        } else {
            hi = q;
        }
        if hi - lo <= f64::EPSILON * hi.max(1.0) {
            break;
        }
    }
    Ok(if negate { -q } else { q })
}

/// Critical value `G0` of the one-sided Grubbs test for a reference set of
/// size `n` at the configured significance level:
/// `G0 = (n-1)/sqrt(n) * sqrt(t^2 / (n - 2 + t^2))` with
/// `t = t_quantile(1 - alpha/n, n - 2)`.
pub fn grubbs_critical(n: usize, config: &SignificanceConfig) -> Result<f64> {
    config.validate()?;
    if n < 3 {
        return Err(Error::InsufficientBatches(n));
    }
    let nf = n as f64;
    let t = t_quantile(1.0 - config.alpha / nf, nf - 2.0)?;
    let t2 = t * t;
    Ok((nf - 1.0) / nf.sqrt() * (t2 / (nf - 2.0 + t2)).sqrt())
}

/// One-sided Grubbs test of a single candidate value against a reference set.
///
/// `Low` tests whether the candidate sits suspiciously far below the
/// reference mean, `High` whether it sits above:
/// `G = (mean(ref) - candidate) / sample_std(ref)` for `Low`, and the negation
/// of that numerator for `High`. The candidate is an outlier iff `G > G0`.
pub fn grubbs_one_sided(
    reference: &[f64],
    candidate_mean: f64,
    direction: Direction,
    config: &SignificanceConfig,
) -> Result<GrubbsResult> {
    let n = reference.len();
    if n < 3 {
        return Err(Error::InsufficientBatches(n));
    }
    let m = mean(reference);
    let s = sample_std(reference);
    if s == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let g = match direction {
        Direction::Low => (m - candidate_mean) / s,
        Direction::High => (candidate_mean - m) / s,
    };
    let g0 = grubbs_critical(n, config)?;
    Ok(GrubbsResult {
        g,
        g0,
        n,
        is_outlier: g > g0,
        direction,
    })
}

/// Shannon entropy of the softmax distribution induced by `logits`, in nats.
///
/// Result lies in `[0, ln(K)]` for `K` logits.
pub fn shannon_entropy(logits: &[f64]) -> Result<f64> {
    if logits.len() < 2 || logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidLogits);
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|&v| (v - max).exp()).sum();
    let ln_z = z.ln();
    let mut h = 0.0;
    for &v in logits {
        let log_p = (v - max) - ln_z;
        let p = log_p.exp();
        if p > 0.0 {
            h -= p * log_p;
        }
    }
    Ok(h)
}

/// Cosine similarity `dot(u, v) / (|u| |v|)`, in `[-1, 1]` up to rounding.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (&a, &b) in u.iter().zip(v.iter()) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(dot / (nu.sqrt() * nv.sqrt()))
}
